"""Live guidance sessions over a line-oriented JSON protocol.

One TCP port serves two framings of the same messages: newline-delimited
JSON over a persistent connection, and plain HTTP POST (one message per
request) for scripts and browsers.  A session owns a virtual probe in a
per-subject phantom; every step composes the client's delta through the
exact pose library, renders the slice, and attaches each loaded model's
guidance plus the true remaining motion.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from dataclasses import dataclass, field

import numpy as np

from . import demo, phantom as ph, se3
from .model import PolicyModel
from .se3 import GimbalLockError, Pose6

__all__ = ["GuidanceService", "ProtocolServer", "SAFETY_BOX_MM", "SAFETY_PITCH_DEG"]

SAFETY_BOX_MM = 150.0
SAFETY_PITCH_DEG = 80.0

_START_STREAM = 0x5E55_0001


@dataclass
class _Session:
    sid: int
    subject_seed: int
    plane: int
    models: tuple[str, ...]
    phantom: ph.Phantom
    target: Pose6
    start_pose: Pose6
    pose: Pose6
    noise_seed: int
    start_seed: int
    steps: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _clamp_pose(p: Pose6) -> Pose6:
    vals = p.as_array()
    vals[:3] = np.clip(vals[:3], -SAFETY_BOX_MM, SAFETY_BOX_MM)
    vals[4] = np.clip(vals[4], -SAFETY_PITCH_DEG, SAFETY_PITCH_DEG)
    return Pose6.from_array(vals)


def _pose_list(p: Pose6) -> list[float]:
    return [float(v) for v in p.as_array()]


class GuidanceService:
    """Session registry and message dispatch; transport-agnostic."""

    def __init__(self, checkpoints: dict[str, str], fresh_noise: bool = False):
        if not checkpoints:
            raise ValueError("at least one checkpoint is required")
        self.models: dict[str, PolicyModel] = {}
        self.geometry: demo.SliceGeometry | None = None
        for name, path in checkpoints.items():
            model, extras = PolicyModel.load(path)
            if model.variant != name:
                raise ValueError(f"checkpoint {path} holds a {model.variant} model, not {name}")
            spacing = float(extras.get("cfg/spacing", np.array([ph.DEFAULT_SPACING]))[0])
            geom = demo.SliceGeometry(h=model.config.h, w=model.config.w, spacing=spacing)
            if self.geometry is not None and geom != self.geometry:
                raise ValueError("checkpoints disagree on frame geometry")
            self.geometry = geom
            self.models[name] = model
        self.fresh_noise = fresh_noise
        self._sessions: dict[int, _Session] = {}
        self._registry_lock = threading.Lock()
        self._next_sid = 1

    # -- message dispatch ------------------------------------------------------

    def handle(self, msg: dict) -> dict:
        try:
            kind = msg.get("type")
            if kind == "create":
                return self._create(msg)
            if kind == "step":
                return self._step(msg)
            if kind == "reset":
                return self._reset(msg)
            if kind == "close":
                return self._close(msg)
            if kind == "list":
                return {"type": "sessions", "sessions": self.list_sessions()}
            return {"type": "error", "error": f"unknown message type {kind!r}"}
        except (KeyError, TypeError, ValueError) as e:
            return {"type": "error", "error": str(e)}

    def list_sessions(self) -> list[int]:
        with self._registry_lock:
            return sorted(self._sessions)

    def _get(self, sid) -> _Session:
        with self._registry_lock:
            if sid not in self._sessions:
                raise ValueError(f"unknown session {sid}")
            return self._sessions[sid]

    def _create(self, msg: dict) -> dict:
        subject_seed = int(msg["subject_seed"])
        plane = int(msg["plane"])
        if not 0 <= plane < ph.PLANE_COUNT:
            raise ValueError(f"plane must be in [0, {ph.PLANE_COUNT})")
        names = tuple(msg["models"])
        for name in names:
            if name not in self.models:
                raise ValueError(f"model {name!r} is not loaded")
        if not names:
            raise ValueError("at least one model must be requested")
        start_seed = int(msg["start_seed"])

        phantom = ph.generate_phantom(subject_seed)
        target = ph.standard_plane_poses(phantom)[plane]
        rng = np.random.default_rng(
            np.random.SeedSequence([_START_STREAM, subject_seed, plane, start_seed])
        )
        offsets = np.concatenate(
            [
                rng.uniform(-demo.TRANSLATION_BOX, demo.TRANSLATION_BOX, 3),
                rng.uniform(-demo.ANGLE_BOX, demo.ANGLE_BOX, 3),
            ]
        )
        start = Pose6.from_array(demo._clamp_to_region(offsets, target.as_array()) + target.as_array())
        noise_seed = int(rng.integers(0, 2**63 - 1))

        with self._registry_lock:
            sid = self._next_sid
            self._next_sid += 1
            session = _Session(
                sid=sid,
                subject_seed=subject_seed,
                plane=plane,
                models=names,
                phantom=phantom,
                target=target,
                start_pose=start,
                pose=start,
                noise_seed=noise_seed,
                start_seed=start_seed,
            )
            self._sessions[sid] = session
        return self._state(session, created=True)

    def _step(self, msg: dict) -> dict:
        session = self._get(msg["session"])
        delta_vals = msg["delta"]
        if len(delta_vals) != 6:
            raise ValueError("delta must have 6 components")
        delta = Pose6.from_array(np.asarray(delta_vals, dtype=np.float64))
        with session.lock:
            try:
                new_pose = se3.compose(session.pose, delta)
            except GimbalLockError:
                new_pose = se3.compose(session.pose, delta, gimbal_fallback=True)
            session.pose = _clamp_pose(new_pose)
            session.steps += 1
            return self._state(session)

    def _reset(self, msg: dict) -> dict:
        session = self._get(msg["session"])
        with session.lock:
            session.pose = session.start_pose
            session.steps = 0
            return self._state(session)

    def _close(self, msg: dict) -> dict:
        sid = msg["session"]
        with self._registry_lock:
            if sid not in self._sessions:
                return {"type": "error", "error": f"unknown session {sid}"}
            del self._sessions[sid]
        return {"type": "closed", "session": sid}

    # -- state rendering ----------------------------------------------------------

    def _state(self, session: _Session, created: bool = False) -> dict:
        geom = self.geometry
        noise_seed = session.noise_seed + session.steps if self.fresh_noise else session.noise_seed
        frame = ph.render_slice(
            session.phantom,
            session.pose,
            h=geom.h,
            w=geom.w,
            spacing=geom.spacing,
            noise_seed=noise_seed,
        )
        pixels = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)
        frame_msg = {
            "h": geom.h,
            "w": geom.w,
            "pixels_b64": base64.b64encode(pixels.tobytes()).decode("ascii"),
        }
        batch = frame.pixels[None, :, :, None]
        planes = np.array([session.plane])
        guidance = {
            name: [float(v) for v in self.models[name].predict(batch, planes)[0]]
            for name in session.models
        }
        remaining = se3.relative(session.pose, session.target)
        return {
            "type": "created" if created else "state",
            "session": session.sid,
            "step": session.steps,
            "pose": _pose_list(session.pose),
            "frame": frame_msg,
            "guidance": guidance,
            "remaining": _pose_list(remaining),
        }


# -- transports -----------------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    """Sniffs the first line: JSON object -> persistent NDJSON loop,
    HTTP verb -> one request/response exchange."""

    def handle(self) -> None:
        first = self.rfile.readline()
        if not first:
            return
        stripped = first.lstrip()
        if stripped.startswith(b"{"):
            self._ndjson_loop(first)
        else:
            self._http_exchange(first)

    def _respond(self, msg: dict) -> None:
        self.wfile.write((json.dumps(msg) + "\n").encode("utf-8"))
        self.wfile.flush()

    def _ndjson_loop(self, first_line: bytes) -> None:
        line = first_line
        while line:
            text = line.decode("utf-8", errors="replace").strip()
            if text:
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError as e:
                    self._respond({"type": "error", "error": f"malformed JSON: {e}"})
                else:
                    self._respond(self.server.service.handle(msg))
            line = self.rfile.readline()

    def _http_exchange(self, request_line: bytes) -> None:
        try:
            method = request_line.split()[0].decode("ascii", errors="replace").upper()
        except IndexError:
            return
        headers = {}
        while True:
            line = self.rfile.readline()
            if not line or line in (b"\r\n", b"\n"):
                break
            if b":" in line:
                k, v = line.split(b":", 1)
                headers[k.decode().strip().lower()] = v.decode().strip()
        cors = (
            "Access-Control-Allow-Origin: *\r\n"
            "Access-Control-Allow-Methods: POST, GET, OPTIONS\r\n"
            "Access-Control-Allow-Headers: Content-Type\r\n"
        )
        if method == "OPTIONS":
            self.wfile.write(f"HTTP/1.1 204 No Content\r\n{cors}Content-Length: 0\r\n\r\n".encode())
            return
        if method == "GET":
            body = json.dumps(
                {
                    "type": "info",
                    "models": sorted(self.server.service.models),
                    "sessions": self.server.service.list_sessions(),
                }
            ).encode()
        elif method == "POST":
            length = int(headers.get("content-length", "0"))
            raw = self.rfile.read(length) if length else b"{}"
            try:
                msg = json.loads(raw.decode("utf-8"))
                reply = self.server.service.handle(msg)
            except json.JSONDecodeError as e:
                reply = {"type": "error", "error": f"malformed JSON: {e}"}
            body = json.dumps(reply).encode()
        else:
            body = json.dumps({"type": "error", "error": f"unsupported method {method}"}).encode()
        self.wfile.write(
            (
                f"HTTP/1.1 200 OK\r\n{cors}Content-Type: application/json\r\n"
                f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
            ).encode()
            + body
        )


class ProtocolServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: GuidanceService, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t
