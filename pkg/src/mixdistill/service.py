"""Stand-alone HTTP inference server for a trained checkpoint.

Protocol (JSON over HTTP):

* ``GET /info`` -> ``{"num_classes": K, "input_shape": [H, W, C], "model_id": str}``
* ``POST /predict`` with ``{"shape": [B, H, W, C], "pixels": [flat floats]}``
  -> ``{"probs": [[K floats] x B]}``

Errors: 400 for malformed JSON or shape mismatch, 413 when B exceeds the
server batch limit.  One log line is appended per request (batch size,
latency).  Inference is stateless, so identical bodies yield identical
responses.
"""

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import nn
from .errors import FormatError, InputError


@dataclass
class ServiceConfig:
    bind: str = "127.0.0.1:8300"
    checkpoint: str = ""
    max_batch: int = 1024
    log_path: str | None = None

    def __post_init__(self):
        if self.max_batch < 1:
            raise InputError("max_batch must be >= 1")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # default stderr chatter off; we log ourselves
        pass

    def _send(self, code, payload):
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/info":
            self._send(404, {"error": "unknown path"})
            return
        model = self.server.model
        self._send(200, {
            "num_classes": model.spec.num_classes,
            "input_shape": list(model.spec.input_shape),
            "model_id": self.server.model_id,
        })

    def do_POST(self):
        if self.path != "/predict":
            self._send(404, {"error": "unknown path"})
            return
        start = time.monotonic()
        try:
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length))
            shape = payload["shape"]
            pixels = payload["pixels"]
        except (ValueError, KeyError, TypeError):
            self._send(400, {"error": "malformed JSON body"})
            return

        model = self.server.model
        if (len(shape) != 4 or tuple(shape[1:]) != model.spec.input_shape
                or shape[0] < 1 or len(pixels) != int(np.prod(shape))):
            self._send(400, {"error": f"shape mismatch, expected [B, *{list(model.spec.input_shape)}]"})
            return
        if shape[0] > self.server.max_batch:
            self._send(413, {"error": f"batch {shape[0]} exceeds limit {self.server.max_batch}"})
            return

        images = np.array(pixels, dtype=np.float64).reshape(shape)
        probs = nn.predict_probs(model, images)
        self._send(200, {"probs": probs.tolist()})
        self.server.log_line(f"predict batch={shape[0]} latency_ms="
                             f"{1000 * (time.monotonic() - start):.2f}")


class TeacherServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, cfg):
        self.model = nn.load_model(cfg.checkpoint)
        # grad-free forward smoke test: the checkpoint must run cleanly
        smoke = np.zeros((1,) + self.model.spec.input_shape)
        probs = nn.predict_probs(self.model, smoke)
        if abs(float(probs.sum()) - 1.0) > 1e-6:
            raise FormatError(f"{cfg.checkpoint}: checkpoint fails the forward self-check")
        self.model_id = f"mixdistill:{self.model.rng_seed}"
        self.max_batch = cfg.max_batch
        self._log_lock = threading.Lock()
        self._log_path = cfg.log_path
        host, port = cfg.bind.rsplit(":", 1)
        super().__init__((host, int(port)), _Handler)

    def log_line(self, line):
        if self._log_path is None:
            return
        with self._log_lock:
            with open(self._log_path, "a") as f:
                f.write(line + "\n")


def serve(cfg):
    """Run until terminated (Ctrl-C)."""
    server = TeacherServer(cfg)
    print(f"serving {cfg.checkpoint} on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()


def start_background(cfg):
    """Start a server thread on an OS-assigned port; returns (server, url).

    Used by tests and loopback transport checks.
    """
    server = TeacherServer(cfg)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    return server, f"http://{host}:{port}"
