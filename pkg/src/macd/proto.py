"""Wire-protocol backend client.

Speaks newline-delimited JSON to an external scorer over a spawned
subprocess (stdio) or a TCP socket. One request is in flight per
connection; the server must echo the request id and answer in order.

Message schema:
  request   {"id": int, "op": "caps"|"logits"|"query_loss"|"loss_grad", ...}
  response  {"id": int, "ok": true, "result": {...}}
            {"id": int, "ok": false, "error": {"code": str, "message": str}}
  tensor    {"shape": [...], "data": "<base64 little-endian float32,
             row-major, channel-fastest>"}

The loss_grad payload carries the base video, per-track masks, strengths
and the full compose configuration so the server can re-render the
counterfactual view itself and differentiate through it.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .backend import BackendCapabilities, GradRequest, _raw_strengths
from .compose import StrengthVector, perturbation_field, render_view_f64
from .errors import BackendError, ConfigError
from .video import TokenSequence, VideoTensor


def encode_tensor(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_tensor(obj: dict) -> np.ndarray:
    shape = tuple(int(s) for s in obj["shape"])
    raw = base64.b64decode(obj["data"])
    flat = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape)) if shape else flat.size
    if flat.size != expected:
        raise BackendError(f"tensor payload {flat.size} values, shape {shape}")
    return flat.reshape(shape).astype(np.float32)


class _StdioTransport:
    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)

    def roundtrip(self, line: str) -> str:
        if self.proc.poll() is not None:
            raise BackendError("bridge process exited")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
            reply = self.proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"bridge pipe failed: {exc}") from exc
        if not reply:
            raise BackendError("bridge closed the stream")
        return reply

    def close(self):
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=30)
        except OSError as exc:
            raise BackendError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.rfile = self.sock.makefile("r", encoding="utf-8")
        self.wfile = self.sock.makefile("w", encoding="utf-8")

    def roundtrip(self, line: str) -> str:
        try:
            self.wfile.write(line + "\n")
            self.wfile.flush()
            reply = self.rfile.readline()
        except OSError as exc:
            raise BackendError(f"bridge socket failed: {exc}") from exc
        if not reply:
            raise BackendError("bridge closed the connection")
        return reply

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


@dataclass
class ProtoBackend:
    """ModelBackend over the wire; contracts mirror the toy backend."""

    transport: object
    _caps: BackendCapabilities | None = None
    _next_id: int = 0

    @staticmethod
    def from_spec(spec: str) -> "ProtoBackend":
        if spec.startswith("stdio:"):
            cmd = spec[len("stdio:"):]
            if not cmd:
                raise ConfigError("proto:stdio needs a command to spawn")
            return ProtoBackend(_StdioTransport(cmd))
        host, sep, port = spec.rpartition(":")
        if not sep:
            raise ConfigError(f"bad proto address {spec!r}; want host:port or "
                              "stdio:<command>")
        try:
            return ProtoBackend(_TcpTransport(host, int(port)))
        except ValueError as exc:
            raise ConfigError(f"bad proto port in {spec!r}") from exc

    def close(self):
        self.transport.close()

    def _call(self, op: str, payload: dict) -> dict:
        self._next_id += 1
        rid = self._next_id
        line = json.dumps({"id": rid, "op": op, **payload})
        reply = self.transport.roundtrip(line)
        try:
            msg = json.loads(reply)
        except json.JSONDecodeError as exc:
            raise BackendError(f"bridge sent invalid JSON: {reply[:200]!r}") from exc
        if msg.get("id") != rid:
            raise BackendError(f"bridge answered id {msg.get('id')} to request {rid}")
        if not msg.get("ok"):
            err = msg.get("error", {})
            raise BackendError(f"bridge error {err.get('code')}: {err.get('message')}")
        return msg["result"]

    def capabilities(self) -> BackendCapabilities:
        if self._caps is None:
            r = self._call("caps", {})
            self._caps = BackendCapabilities(
                vocab_size=int(r["vocab_size"]),
                supports_analytic_grad=bool(r["supports_analytic_grad"]),
                max_frames=int(r.get("max_frames", 1 << 16)))
        return self._caps

    def logits(self, view: VideoTensor, query: TokenSequence,
               prefix: TokenSequence) -> np.ndarray:
        r = self._call("logits", {"view": encode_tensor(view.frames),
                                  "query": list(query.ids),
                                  "prefix": list(prefix.ids)})
        return np.asarray(r["logits"], dtype=np.float64)

    def query_loss(self, view: VideoTensor, query: TokenSequence) -> float:
        r = self._call("query_loss", {"view": encode_tensor(view.frames),
                                      "query": list(query.ids)})
        return float(r["loss"])

    def loss_at_strengths(self, req: GradRequest, strengths: StrengthVector) -> float:
        z = perturbation_field(req.base.shape, req.tracks, strengths, req.compose)
        frames = render_view_f64(req.base, z, req.compose.render, req.compose.fill)
        view = VideoTensor(frames.astype(np.float32))
        return self.query_loss(view, req.query)

    def loss_and_grad(self, req: GradRequest) -> tuple[float, StrengthVector]:
        cfg = req.compose
        payload = {
            "base": encode_tensor(req.base.frames),
            "tracks": [{
                "confidence": tr.confidence,
                "masks": {str(f): encode_tensor(m.astype(np.float32))
                          for f, m in sorted(tr.masks.items())},
            } for tr in req.tracks],
            "object_r": req.strengths.object_r.tolist(),
            "frame_r": req.strengths.frame_r.tolist(),
            "fusion": cfg.fusion,
            "render": cfg.render,
            "fill": cfg.fill,
            "policy": {"mode": cfg.policy.mode, "subset": list(cfg.policy.subset),
                       "keep_stride": cfg.policy.keep_stride},
            "query": list(req.query.ids),
        }
        r = self._call("loss_grad", payload)
        grad = _raw_strengths(np.asarray(r["object_r"], dtype=np.float64),
                              np.asarray(r["frame_r"], dtype=np.float64))
        return float(r["loss"]), grad

    def loss_grad_wrt_strengths(self, req: GradRequest) -> StrengthVector:
        return self.loss_and_grad(req)[1]
