"""Request loop for the newline-delimited JSON protocol.

One handshake record, then one response record per request line. Request
errors produce an error record and the loop keeps serving; only a closed
input stream or transport failure ends the process.
"""

from __future__ import annotations

import json
import logging
import socketserver
from pathlib import Path

from .config import SidecarConfig
from .features import FeatureEngine, FrameReadError

logger = logging.getLogger(__name__)


def handshake_record(engine: FeatureEngine) -> dict:
    return {"type": "handshake", "dim": engine.dim, **engine.identity()}


def handle_request(engine: FeatureEngine, line: str) -> dict:
    """One request line to one response record; never raises for bad input."""
    try:
        request = json.loads(line)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
    except (json.JSONDecodeError, ValueError) as exc:
        return {"detected": False, "dim": engine.dim, "error": f"bad request: {exc}"}
    mode = request.get("mode")
    frame_path = request.get("frame_path")
    if not isinstance(frame_path, str) or not frame_path:
        return {"detected": False, "dim": engine.dim, "error": "request missing frame_path"}
    try:
        vector = engine.extract(mode, frame_path, request.get("prop_text"))
    except FrameReadError as exc:
        return {"detected": False, "dim": engine.dim, "error": str(exc)}
    except ValueError as exc:
        return {"detected": False, "dim": engine.dim, "error": str(exc)}
    except Exception as exc:  # noqa: BLE001 - a model failure must not kill the loop
        logger.exception("request failed")
        return {"detected": False, "dim": engine.dim, "error": f"internal error: {exc}"}
    if vector is None:
        return {"detected": False, "dim": engine.dim}
    return {"detected": True, "dim": engine.dim, "vector": [float(x) for x in vector]}


def _serve_stream(engine: FeatureEngine, rfile, wfile) -> None:
    wfile.write(json.dumps(handshake_record(engine)) + "\n")
    wfile.flush()
    for line in rfile:
        if not line.strip():
            continue
        wfile.write(json.dumps(handle_request(engine, line)) + "\n")
        wfile.flush()


def serve(config: SidecarConfig) -> None:
    """Run the request loop on the configured transport until input closes."""
    import sys

    engine = FeatureEngine(config)
    if config.transport == "stdio":
        _serve_stream(engine, sys.stdin, sys.stdout)
        return
    serve_socket(engine, Path(config.socket_path))


def serve_socket(engine: FeatureEngine, socket_path: Path) -> None:
    """Serve sequential connections on a local Unix socket."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            reader = (raw.decode("utf-8") for raw in self.rfile)
            handler = self

            class TextWriter:
                def write(self, text):
                    handler.wfile.write(text.encode("utf-8"))

                def flush(self):
                    handler.wfile.flush()

            _serve_stream(engine, reader, TextWriter())

    if socket_path.exists():
        socket_path.unlink()
    with socketserver.UnixStreamServer(str(socket_path), Handler) as server:
        logger.info("listening on %s", socket_path)
        server.serve_forever()
