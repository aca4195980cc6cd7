"""Live session server.

One WebSocket per session carries both planes: text messages are
line-delimited JSON control traffic, binary messages are frame payloads with
a fixed 16-byte header (u32 index, u8 role, 3 reserved bytes, u64 payload
length, all little-endian) followed by PNG bytes.  protocol.md in the repo
root documents every message.

Control messages land in a mailbox drained only at frame boundaries, so a
frame is never solved with a mixture of old and new parameters.
"""

from __future__ import annotations

import asyncio
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from PIL import Image

from .consistency import (
    ConsistencyParams,
    PRESETS,
    SessionState,
    preset,
    stabilize_step,
    stream_end_step,
)
from .flow import BuiltinFlow, FlowOptions
from .imgio import FrameSource, discover_source

log = logging.getLogger("streamstab.service")

ROLE_INPUT = 0
ROLE_PROCESSED = 1
ROLE_STABILIZED = 2

FRAME_HEADER = struct.Struct("<IB3xQ")


@dataclass(frozen=True)
class SourceSpec:
    name: str
    input_dir: Path
    processed_dir: Path
    pattern: str | None = None


@dataclass
class ServerConfig:
    sources: dict[str, SourceSpec]
    params: ConsistencyParams
    preset_name: str | None = None
    static_dir: Path | None = None


def load_server_config(path: str | Path) -> ServerConfig:
    """Parse the flat key-value config: source.<name>.input / .processed ..."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError("server config must be a flat key-value mapping")
    sources: dict[str, dict] = {}
    params_keys: dict[str, object] = {}
    preset_name = None
    static_dir = None
    for key, value in raw.items():
        parts = str(key).split(".")
        if parts[0] == "source" and len(parts) == 3:
            sources.setdefault(parts[1], {})[parts[2]] = value
        elif key == "preset":
            preset_name = str(value)
        elif key == "static":
            static_dir = Path(value)
        else:
            params_keys[key] = value
    params = preset(preset_name) if preset_name else ConsistencyParams()
    if params_keys:
        params = ConsistencyParams.from_dict(params_keys, base=params)
    specs = {}
    for name, fields_ in sources.items():
        if "input" not in fields_ or "processed" not in fields_:
            raise ValueError(f"source {name!r} needs input and processed directories")
        specs[name] = SourceSpec(
            name=name,
            input_dir=Path(fields_["input"]),
            processed_dir=Path(fields_["processed"]),
            pattern=fields_.get("pattern"),
        )
    if not specs:
        raise ValueError("server config declares no sources")
    return ServerConfig(sources=specs, params=params, preset_name=preset_name, static_dir=static_dir)


def encode_png(frame: np.ndarray) -> bytes:
    data = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    img = Image.fromarray(data, mode="L" if data.ndim == 2 else "RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def pack_frame_message(index: int, role: int, png: bytes) -> bytes:
    return FRAME_HEADER.pack(index, role, len(png)) + png


class Session:
    """Server-side state for one connected client."""

    def __init__(self, config: ServerConfig, session_id: int):
        self.config = config
        self.id = session_id
        self.params = config.params
        self.preset_name = config.preset_name
        self.inputs: FrameSource | None = None
        self.processed: FrameSource | None = None
        self.source_name: str | None = None
        self.state: SessionState | None = None
        self.flow = BuiltinFlow(FlowOptions(downscale=config.params.flow_downscale))
        self.playing = False
        self.loaded_through = 0
        self.ended = False
        # (index, params) per emitted stabilized frame; conformance tests
        # cross-check these against the wire echoes
        self.params_log: list[tuple[int, ConsistencyParams]] = []

    @property
    def frame_count(self) -> int:
        return len(self.inputs) if self.inputs is not None else 0

    def open_source(self, name: str) -> None:
        spec = self.config.sources.get(name)
        if spec is None:
            raise ValueError(f"unknown source {name!r}")
        self.inputs = discover_source(spec.input_dir, spec.pattern)
        self.processed = discover_source(spec.processed_dir, spec.pattern)
        if len(self.inputs) != len(self.processed):
            raise ValueError(
                f"source {name!r}: {len(self.inputs)} input vs {len(self.processed)} processed frames"
            )
        self.source_name = name
        self.playing = False
        self.ended = False
        self._reseed(1)

    def _reseed(self, position: int) -> None:
        self.state = SessionState(params=self.params)
        self.state.push_pair(position, self.inputs.frame(position), self.processed.frame(position))
        self.loaded_through = position
        # honor one-frame latency: consume the next input before the seeded
        # frame is considered emittable
        if position < self.frame_count:
            self._load_next_pair()
        self.ended = position >= self.frame_count

    def _load_next_pair(self) -> None:
        nxt = self.loaded_through + 1
        self.state.push_pair(nxt, self.inputs.frame(nxt), self.processed.frame(nxt))
        self.loaded_through = nxt

    def seek(self, position: int) -> None:
        if self.inputs is None:
            raise ValueError("no source selected")
        if not 1 <= position <= self.frame_count:
            raise ValueError(f"seek target {position} outside 1..{self.frame_count}")
        self.playing = False
        self._reseed(position)

    def set_params(self, payload: dict) -> None:
        self.params = ConsistencyParams.from_dict(payload, base=self.params)
        self.preset_name = None
        self._sync_state_params()

    def set_preset(self, name: str) -> None:
        self.params = preset(name)
        self.preset_name = name
        self._sync_state_params()

    def _sync_state_params(self) -> None:
        self.flow = BuiltinFlow(FlowOptions(downscale=self.params.flow_downscale))
        if self.state is not None:
            self.state.params = self.params

    def seeded_triplet(self) -> tuple[int, dict, list[tuple[int, np.ndarray]]]:
        position = self.state.solved_through
        stabilized = self.state.prev_output
        frames = [
            (ROLE_INPUT, self.inputs.frame(position)),
            (ROLE_PROCESSED, self.processed.frame(position)),
            (ROLE_STABILIZED, stabilized),
        ]
        self.params_log.append((position, self.params))
        return position, {"flow": 0.0, "solve": 0.0}, frames

    def has_pending_frames(self) -> bool:
        return self.state is not None and self.state.solved_through < self.frame_count

    def solve_next(self) -> tuple[int, dict, list[tuple[int, np.ndarray]], ConsistencyParams]:
        """Advance by one frame; blocking CPU work, run off the event loop."""
        params_used = self.params
        target = self.state.solved_through + 1
        if target < self.frame_count:
            if self.loaded_through < target + 1:
                self._load_next_pair()
            output = stabilize_step(self.state, self.flow)
        else:
            output = stream_end_step(self.state, self.flow)
        timing = {
            "flow": round(self.state.last_timing.flow_ms, 3),
            "solve": round(self.state.last_timing.solve_ms, 3),
        }
        frames = [
            (ROLE_INPUT, self.inputs.frame(target)),
            (ROLE_PROCESSED, self.processed.frame(target)),
            (ROLE_STABILIZED, output),
        ]
        self.params_log.append((target, params_used))
        return target, timing, frames, params_used


def build_app(config: ServerConfig) -> FastAPI:
    app = FastAPI(title="streamstab")
    app.state.config = config
    app.state.sessions = {}
    app.state.next_session_id = 1

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):  # noqa: ANN202
        await ws.accept()
        session = Session(config, app.state.next_session_id)
        app.state.next_session_id += 1
        app.state.sessions[session.id] = session
        try:
            await _session_loop(ws, session)
        except WebSocketDisconnect:
            pass
        except RuntimeError as exc:
            # sends on a socket that closed mid-frame surface as RuntimeError
            log.info("session %d closed: %s", session.id, exc)
        finally:
            app.state.sessions.pop(session.id, None)

    if config.static_dir is not None and config.static_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


async def _send_json(ws: WebSocket, payload: dict) -> None:
    await ws.send_text(json.dumps(payload) + "\n")


async def _emit_triplet(ws: WebSocket, session: Session, index: int, timing: dict,
                        frames, params: ConsistencyParams) -> None:
    await _send_json(
        ws,
        {
            "kind": "frame_meta",
            "index": index,
            "params": params.to_dict(),
            "preset": session.preset_name,
            "timing_ms": timing,
        },
    )
    for role, frame in frames:
        png = await asyncio.to_thread(encode_png, frame)
        await ws.send_bytes(pack_frame_message(index, role, png))


async def _session_loop(ws: WebSocket, session: Session) -> None:
    await _send_json(
        ws,
        {
            "kind": "hello",
            "sources": sorted(session.config.sources),
            "presets": sorted(PRESETS),
            "params": session.params.to_dict(),
        },
    )
    mailbox: asyncio.Queue = asyncio.Queue()

    async def pump() -> None:
        try:
            while True:
                await mailbox.put(await ws.receive_text())
        except WebSocketDisconnect:
            await mailbox.put(None)

    pump_task = asyncio.create_task(pump())
    try:
        while True:
            if session.playing and session.has_pending_frames():
                # drain the mailbox at the frame boundary
                drained = True
                while drained:
                    try:
                        message = mailbox.get_nowait()
                    except asyncio.QueueEmpty:
                        drained = False
                        continue
                    if message is None:
                        return
                    await _handle_control(ws, session, message)
                if not (session.playing and session.has_pending_frames()):
                    continue
                index, timing, frames, used = await asyncio.to_thread(session.solve_next)
                await _emit_triplet(ws, session, index, timing, frames, used)
                if not session.has_pending_frames():
                    session.playing = False
                    session.ended = True
                    await _send_json(ws, {"kind": "end_of_stream", "index": index})
            else:
                message = await mailbox.get()
                if message is None:
                    return
                await _handle_control(ws, session, message)
    finally:
        pump_task.cancel()


async def _handle_control(ws: WebSocket, session: Session, message: str) -> None:
    try:
        parsed = json.loads(message)
        kind = parsed.get("kind")
        payload = parsed.get("payload") or {}
    except (json.JSONDecodeError, AttributeError):
        await _send_json(ws, {"kind": "error", "message": "malformed control message"})
        return
    try:
        if kind == "select_source":
            session.open_source(str(payload.get("source")))
            await _send_json(
                ws,
                {
                    "kind": "ack",
                    "for": "select_source",
                    "source": session.source_name,
                    "frames": session.frame_count,
                    "width": session.inputs.width,
                    "height": session.inputs.height,
                },
            )
            await _emit_triplet(ws, session, *session.seeded_triplet(), session.params)
        elif kind == "set_params":
            session.set_params(payload)
            await _send_json(
                ws, {"kind": "ack", "for": "set_params", "params": session.params.to_dict()}
            )
        elif kind == "set_preset":
            session.set_preset(str(payload.get("preset")))
            await _send_json(
                ws,
                {
                    "kind": "ack",
                    "for": "set_preset",
                    "preset": session.preset_name,
                    "params": session.params.to_dict(),
                },
            )
        elif kind == "seek":
            session.seek(int(payload.get("frame")))
            await _send_json(ws, {"kind": "ack", "for": "seek", "frame": session.state.solved_through})
            await _emit_triplet(ws, session, *session.seeded_triplet(), session.params)
        elif kind == "play":
            if session.state is None:
                raise ValueError("no source selected")
            if session.has_pending_frames():
                session.playing = True
            session.ended = not session.has_pending_frames()
            await _send_json(ws, {"kind": "ack", "for": "play", "playing": session.playing})
            if session.ended:
                await _send_json(
                    ws, {"kind": "end_of_stream", "index": session.state.solved_through}
                )
        elif kind == "pause":
            session.playing = False
            await _send_json(ws, {"kind": "ack", "for": "pause"})
        else:
            await _send_json(ws, {"kind": "error", "message": f"unknown kind {kind!r}"})
    except (ValueError, OSError) as exc:
        await _send_json(ws, {"kind": "error", "for": kind, "message": str(exc)})


def run_server(config_path: str, listen: str) -> None:
    import uvicorn

    config = load_server_config(config_path)
    app = build_app(config)
    host, _, port = listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
