"""FastAPI server exposing Bob's side of the protocol over HTTP."""

from __future__ import annotations

import os
import secrets
import subprocess
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import uvicorn
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool

from ppsr import __version__
from ppsr.errors import DataError, FramingError, OutOfOrderError, PPSRError
from ppsr.events import track_event
from ppsr.protocol import BobParty, BobSession, ProtocolTranscript
from ppsr.transport import FRAME_MEDIA_TYPE, SESSION_HEADER

MAX_SESSIONS = 1024


class SessionRequest(BaseModel):
    target: int


class SessionStore:
    """Open and finished sessions, oldest evicted first."""

    def __init__(self, capacity: int = MAX_SESSIONS):
        self.capacity = capacity
        self._sessions: OrderedDict[str, BobSession] = OrderedDict()
        self._lock = threading.Lock()

    def add(self, session: BobSession) -> str:
        session_id = secrets.token_hex(16)
        with self._lock:
            self._sessions[session_id] = session
            while len(self._sessions) > self.capacity:
                self._sessions.popitem(last=False)
        return session_id

    def get(self, session_id: str) -> BobSession:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="Unknown session")
        return session

    def __len__(self) -> int:
        return len(self._sessions)


def _http_error(e: PPSRError) -> HTTPException:
    if isinstance(e, FramingError):
        return HTTPException(status_code=400, detail=str(e))
    if isinstance(e, OutOfOrderError):
        return HTTPException(status_code=409, detail=str(e))
    if isinstance(e, DataError):
        return HTTPException(status_code=404, detail=str(e))
    return HTTPException(status_code=422, detail=str(e))


def _read_git_sha():
    """Get git sha from env or from git (best-effort)."""
    sha = os.environ.get("GIT_SHA") or os.environ.get("GITHUB_SHA")
    if sha:
        return sha
    try:
        out = subprocess.check_output(
            ["git", "rev-parse", "HEAD"],
            cwd=str(Path(__file__).resolve().parents[1]),
            stderr=subprocess.DEVNULL,
        )
        return out.decode().strip()
    except Exception:
        return None


def create_app(bob: BobParty, capacity: int = MAX_SESSIONS) -> FastAPI:
    app = FastAPI(
        title="PPSR Bob API",
        description="Social-provider side of the privacy-preserving recommendation protocol",
        version=__version__,
    )
    store = SessionStore(capacity)
    app.state.bob = bob
    app.state.sessions = store

    # Health check
    @app.get("/health")
    @app.get("/healthz")
    def health():
        """Health check endpoint."""
        return {"status": "healthy", "key_id": bob.keypair.key_id}

    @app.get("/version")
    def version():
        """Return application version and git sha (if available)."""
        return {"version": __version__, "git_sha": _read_git_sha()}

    @app.post("/sessions")
    def open_session(req: SessionRequest):
        """Start a run for one target user; the body is message 1."""
        try:
            session = bob.open_session(req.target, ProtocolTranscript())
            data = session.start()
        except PPSRError as e:
            raise _http_error(e) from None
        session_id = store.add(session)
        track_event("http_session_opened", target=req.target)
        return Response(
            content=data,
            media_type=FRAME_MEDIA_TYPE,
            headers={SESSION_HEADER: session_id},
        )

    @app.post("/sessions/{session_id}/messages")
    async def post_message(session_id: str, request: Request):
        """Accept message 2 and answer with message 3."""
        session = store.get(session_id)
        body = await request.body()
        try:
            data = await run_in_threadpool(session.handle, body)
        except PPSRError as e:
            raise _http_error(e) from None
        return Response(content=data, media_type=FRAME_MEDIA_TYPE)

    return app


def serve(bob: BobParty, host: str = "127.0.0.1", port: int = 8000) -> None:
    print(f"Starting PPSR Bob server on http://{host}:{port} (key {bob.keypair.key_id})")
    print(f"API docs available at: http://{host}:{port}/docs")
    uvicorn.run(create_app(bob), host=host, port=port)


def main(argv: Optional[list[str]] = None) -> None:
    """Run the server (same options as ``ppsr serve``)."""
    import sys

    from ppsr.cli import main as cli_main

    cli_main(["serve", *(sys.argv[1:] if argv is None else argv)])


if __name__ == "__main__":
    main()
