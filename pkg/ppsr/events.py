"""Structured event logging.

``track_event`` emits one record per domain event. The message is rendered as
``event key=value ...`` and the raw fields travel in ``extra`` so a JSON
handler can pick them up.
"""

from __future__ import annotations

import logging
from typing import Any

logger = logging.getLogger("ppsr.events")


def _render(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def track_event(event: str, level: int = logging.INFO, **properties: Any) -> None:
    """Log a domain event with its properties."""
    if not logger.isEnabledFor(level):
        return
    fields = " ".join(f"{k}={_render(v)}" for k, v in sorted(properties.items()))
    logger.log(
        level,
        f"{event} {fields}".rstrip(),
        extra={"event": event, "properties": properties},
    )


def configure_logging(verbosity: int = 0) -> None:
    """Set up the root handler for command-line use."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
