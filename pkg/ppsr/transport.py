"""Ways of moving protocol frames between Alice and Bob.

Every transport hands Alice a link with ``send``, ``recv`` and ``close``.
In-process and socket transports run Bob's session in a worker thread; the
HTTP transport talks to a running ``ppsr-bob-server``.
"""

from __future__ import annotations

import logging
import queue
import socket
import ssl
import threading
from typing import Callable, Optional

import certifi
import httpx

from ppsr import wire
from ppsr.errors import (
    FramingError,
    OutOfOrderError,
    PPSRError,
    ProtocolError,
    ProtocolViolation,
)

logger = logging.getLogger(__name__)

# None waits as long as the peer is alive; a dead peer closes the channel
DEFAULT_TIMEOUT: Optional[float] = None


def _ssl_context() -> ssl.SSLContext:
    """Verified TLS context backed by certifi's CA bundle."""
    return ssl.create_default_context(cafile=certifi.where())


def serve_bob(session, send: Callable[[bytes], None], recv: Callable[[], bytes]) -> None:
    """Drive one Bob session over a pair of frame callbacks."""
    send(session.start())
    send(session.handle(recv()))


class _ThreadLink:
    """Alice's end of a link whose Bob runs in a local thread."""

    def __init__(self, timeout: Optional[float]):
        self.timeout = timeout
        self.peer_error: Optional[PPSRError] = None
        self._thread: Optional[threading.Thread] = None

    def _start_bob(self, bob, target, transcript, send, recv, cleanup) -> None:
        def run():
            try:
                session = bob.open_session(target, transcript)
                serve_bob(session, send, recv)
            except PPSRError as e:
                logger.warning("bob session for %s failed: %s", target, e)
                self.peer_error = e
            except (ConnectionError, OSError):
                # Alice hung up first
                pass
            finally:
                cleanup()

        self._thread = threading.Thread(target=run, name=f"bob-{target}", daemon=True)
        self._thread.start()

    def _join(self) -> None:
        if self._thread is not None:
            self._thread.join(self.timeout)
            self._thread = None


_CLOSED = object()


class InProcessLink(_ThreadLink):
    def __init__(self, bob, target, transcript, timeout: Optional[float]):
        super().__init__(timeout)
        self._to_bob: queue.Queue = queue.Queue()
        self._to_alice: queue.Queue = queue.Queue()
        self._start_bob(
            bob,
            target,
            transcript,
            self._to_alice.put,
            lambda: self._get(self._to_bob),
            lambda: self._to_alice.put(_CLOSED),
        )

    def _get(self, q: queue.Queue) -> bytes:
        try:
            item = q.get(timeout=self.timeout)
        except queue.Empty:
            raise ConnectionError("timed out waiting for a frame") from None
        if item is _CLOSED:
            raise ConnectionError("peer closed the channel")
        return item

    def send(self, data: bytes) -> None:
        self._to_bob.put(data)

    def recv(self) -> bytes:
        return self._get(self._to_alice)

    def close(self) -> None:
        self._to_bob.put(_CLOSED)
        self._join()


class InProcessTransport:
    """Queue pair between two threads of one process."""

    def __init__(self, timeout: Optional[float] = DEFAULT_TIMEOUT):
        self.timeout = timeout

    def connect(self, bob, target, transcript) -> InProcessLink:
        return InProcessLink(bob, target, transcript, self.timeout)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed")
        buf.extend(chunk)
    return bytes(buf)


class SocketLink(_ThreadLink):
    def __init__(self, bob, target, transcript, host: str, timeout: Optional[float]):
        super().__init__(timeout)
        listener = socket.create_server((host, 0))
        listener.settimeout(timeout)
        address = listener.getsockname()[:2]

        def bob_conn():
            conn, _ = listener.accept()
            listener.close()
            conn.settimeout(timeout)
            return conn

        state: dict = {}

        def send(data: bytes) -> None:
            if "conn" not in state:
                state["conn"] = bob_conn()
            state["conn"].sendall(data)

        def recv() -> bytes:
            return wire.read_frame(lambda n: _recv_exact(state["conn"], n))

        def cleanup() -> None:
            conn = state.get("conn")
            if conn is not None:
                conn.close()
            else:
                listener.close()

        # the backlog completes the handshake before Bob accepts
        self._sock = socket.create_connection(address, timeout=timeout)
        self._start_bob(bob, target, transcript, send, recv, cleanup)

    def send(self, data: bytes) -> None:
        self._sock.sendall(data)

    def recv(self) -> bytes:
        try:
            return wire.read_frame(lambda n: _recv_exact(self._sock, n))
        except socket.timeout:
            raise ConnectionError("timed out waiting for a frame") from None

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._join()


class SocketTransport:
    """One TCP connection per run on a loopback port."""

    def __init__(self, host: str = "127.0.0.1", timeout: Optional[float] = DEFAULT_TIMEOUT):
        self.host = host
        self.timeout = timeout

    def connect(self, bob, target, transcript) -> SocketLink:
        return SocketLink(bob, target, transcript, self.host, self.timeout)


_STATUS_ERRORS = {
    400: FramingError,
    404: ProtocolViolation,
    409: OutOfOrderError,
    422: ProtocolViolation,
}

SESSION_HEADER = "X-Session-Id"
FRAME_MEDIA_TYPE = "application/octet-stream"


class HttpLink:
    """Alice's end of an HTTP session against a Bob server.

    ``recv`` returns the body of the last response; the first ``recv`` opens
    the session.
    """

    def __init__(self, client: httpx.Client, target: int):
        self.client = client
        self.target = target
        self.peer_error: Optional[PPSRError] = None
        self.session_id: Optional[str] = None
        self._pending: Optional[bytes] = None

    def _check(self, resp: httpx.Response) -> bytes:
        if resp.status_code == 200:
            return resp.content
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        error = _STATUS_ERRORS.get(resp.status_code, ProtocolError)
        raise error(f"bob answered {resp.status_code}: {detail}")

    def recv(self) -> bytes:
        if self.session_id is None:
            try:
                resp = self.client.post("/sessions", json={"target": self.target})
            except httpx.HTTPError as e:
                raise ConnectionError(str(e)) from e
            data = self._check(resp)
            self.session_id = resp.headers[SESSION_HEADER]
            return data
        if self._pending is None:
            raise ProtocolError("no frame waiting")
        data, self._pending = self._pending, None
        return data

    def send(self, data: bytes) -> None:
        try:
            resp = self.client.post(
                f"/sessions/{self.session_id}/messages",
                content=data,
                headers={"Content-Type": FRAME_MEDIA_TYPE},
            )
        except httpx.HTTPError as e:
            raise ConnectionError(str(e)) from e
        self._pending = self._check(resp)

    def close(self) -> None:
        pass


class HttpTransport:
    """Alice talks to a Bob server over HTTP(S).

    Pass a ready ``client`` (for example a FastAPI ``TestClient``) or a
    ``base_url``; https URLs are verified against certifi's bundle.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        client: Optional[httpx.Client] = None,
        timeout: Optional[float] = DEFAULT_TIMEOUT,
    ):
        if client is None:
            if base_url is None:
                raise ValueError("need a base_url or a client")
            client = httpx.Client(base_url=base_url, timeout=timeout, verify=_ssl_context())
        self.client = client

    def connect(self, bob, target, transcript) -> HttpLink:
        # bob lives behind the server; the local party object is unused
        return HttpLink(self.client, target)


TRANSPORTS = {
    "inprocess": InProcessTransport,
    "socket": SocketTransport,
    "http": HttpTransport,
}
