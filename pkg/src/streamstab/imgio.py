"""Frame and optical-flow file I/O.

Frames are float32 arrays of shape (H, W, C) with C in {1, 3} and values in
[0, 1]; they are made read-only after construction so they can be shared
freely between threads.  Flow fields use the Middlebury ``.flo`` layout on
disk and carry a per-pixel validity mask in memory.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

FLO_MAGIC = 202021.25
# Middlebury convention: components this large mark unknown flow.
FLO_INVALID_THRESHOLD = 1e9


class ImageIOError(Exception):
    """Unreadable, unwritable, or malformed image file."""


class FlowFormatError(Exception):
    """Malformed .flo file or unwritable flow field."""


def as_frame(data: np.ndarray) -> np.ndarray:
    """Validate an array as a frame: float32, (H, W, C), C in {1, 3}, read-only."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"frame must be (H, W, 1|3), got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("zero-sized frame")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame contains non-finite values")
    arr = np.clip(arr, 0.0, 1.0)
    arr.flags.writeable = False
    return arr


def load_frame(path: str | Path) -> np.ndarray:
    """Load a PNG or binary PPM (P6) image as a [0,1] float32 frame.

    Stored integers are normalized by (2^bitdepth - 1).
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        return _load_ppm(path)
    if suffix == ".png":
        return _load_png(path)
    raise ImageIOError(f"unsupported format: {path}")


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
                arr = arr.astype(np.float32)
            else:
                if img.mode not in ("L", "RGB"):
                    img = img.convert("RGB" if ("A" in img.mode or img.mode == "P") else "L")
                arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise ImageIOError(f"unreadable file: {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageIOError(f"zero-sized image: {path}")
    return as_frame(arr)


def _load_ppm(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"unreadable file: {path}: {exc}") from exc
    try:
        header, offset = _parse_pnm_header(raw)
    except ValueError as exc:
        raise ImageIOError(f"unreadable file: {path}: {exc}") from exc
    width, height, maxval = header
    if width == 0 or height == 0:
        raise ImageIOError(f"zero-sized image: {path}")
    n = width * height * 3
    if maxval < 256:
        payload = np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset)
    else:
        payload = np.frombuffer(raw, dtype=">u2", count=n, offset=offset)
    if payload.size < n:
        raise ImageIOError(f"unreadable file: {path}: truncated pixel data")
    arr = payload.reshape(height, width, 3).astype(np.float32) / float(maxval)
    return as_frame(arr)


def _parse_pnm_header(raw: bytes) -> tuple[tuple[int, int, int], int]:
    if raw[:2] != b"P6":
        raise ValueError("not a binary PPM (P6)")
    fields: list[int] = []
    i = 2
    while len(fields) < 3:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated header")
        fields.append(int(raw[i:j]))
        i = j
    return (fields[0], fields[1], fields[2]), i + 1


def save_frame(frame: np.ndarray, path: str | Path) -> None:
    """Write a frame as 8-bit PNG or binary PPM, chosen by extension."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    path = Path(path)
    quantized = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    suffix = path.suffix.lower()
    try:
        if suffix in (".ppm", ".pnm"):
            if quantized.shape[2] == 1:
                quantized = np.repeat(quantized, 3, axis=2)
            h, w = quantized.shape[:2]
            with open(path, "wb") as fh:
                fh.write(b"P6\n%d %d\n255\n" % (w, h))
                fh.write(quantized.tobytes())
        elif suffix == ".png":
            if quantized.shape[2] == 1:
                img = Image.fromarray(quantized[:, :, 0], mode="L")
            else:
                img = Image.fromarray(quantized, mode="RGB")
            img.save(path, format="PNG")
        else:
            raise ImageIOError(f"unsupported format: {path}")
    except OSError as exc:
        raise ImageIOError(f"unwritable path: {path}: {exc}") from exc


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement in pixels plus a validity mask.

    ``uv[..., 0]`` is horizontal (positive rightward), ``uv[..., 1]`` vertical
    (positive downward).  Invalid pixels keep their stored components so a
    read/write roundtrip is bit-exact.
    """

    uv: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=np.float32)
        if uv.ndim != 3 or uv.shape[2] != 2:
            raise ValueError(f"flow must be (H, W, 2), got {uv.shape}")
        valid = self.valid
        if valid is None:
            valid = np.abs(uv).max(axis=2) <= FLO_INVALID_THRESHOLD
        valid = np.ascontiguousarray(valid, dtype=bool)
        if valid.shape != uv.shape[:2]:
            raise ValueError("validity mask shape mismatch")
        uv = np.ascontiguousarray(uv)
        uv.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def width(self) -> int:
        return self.uv.shape[1]

    @staticmethod
    def zero(height: int, width: int) -> "FlowField":
        return FlowField(np.zeros((height, width, 2), dtype=np.float32))


def read_flo(path: str | Path) -> FlowField:
    """Read a Middlebury .flo file (little-endian, 'PIEH' magic)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FlowFormatError(f"unreadable file: {path}: {exc}") from exc
    if len(raw) < 12:
        raise FlowFormatError(f"bad magic: {path}: file too short")
    magic, width, height = struct.unpack("<fii", raw[:12])
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"bad magic: {path}: got {magic!r}")
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"bad dimensions {width}x{height}: {path}")
    n = width * height * 2
    if len(raw) - 12 != n * 4:
        raise FlowFormatError(
            f"size mismatch: {path}: header says {width}x{height}, "
            f"payload holds {(len(raw) - 12) // 8} pixels"
        )
    uv = np.frombuffer(raw, dtype="<f4", count=n, offset=12).reshape(height, width, 2)
    return FlowField(uv)


def write_flo(flow: FlowField, path: str | Path) -> None:
    """Write a flow field in Middlebury .flo layout; roundtrips bit-exactly."""
    if not np.all(np.isfinite(flow.uv)):
        raise FlowFormatError("non-finite flow")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<fii", FLO_MAGIC, flow.width, flow.height))
            fh.write(np.ascontiguousarray(flow.uv, dtype="<f4").tobytes())
    except OSError as exc:
        raise FlowFormatError(f"unwritable path: {path}: {exc}") from exc


_PATTERN_RE = re.compile(r"%0?(\d*)d")


@dataclass(frozen=True)
class FrameSource:
    """An ordered, fixed-resolution sequence of frame files.

    ``indices[i]`` is the 1-based stream position reported to callers;
    parsed file numbers are kept only for naming outputs.
    """

    paths: tuple[Path, ...]
    file_numbers: tuple[int, ...]
    width: int
    height: int
    channels: int

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.paths) + 1))

    def frame(self, position: int) -> np.ndarray:
        """Load the frame at 1-based stream position."""
        if not 1 <= position <= len(self.paths):
            raise IndexError(f"frame position {position} out of range 1..{len(self.paths)}")
        frame = load_frame(self.paths[position - 1])
        if frame.shape[:2] != (self.height, self.width) or frame.shape[2] != self.channels:
            raise ImageIOError(
                f"resolution drift at {self.paths[position - 1]}: "
                f"expected {self.width}x{self.height}x{self.channels}, got {frame.shape}"
            )
        return frame

    def __iter__(self) -> Iterator[np.ndarray]:
        for pos in self.indices:
            yield self.frame(pos)


def discover_source(directory: str | Path, pattern: str | None = None) -> FrameSource:
    """Build a FrameSource from a directory of numbered frames.

    ``pattern`` is a printf-style name such as ``frame_%05d.png``; files are
    matched and ordered by the parsed number.  Without a pattern, every
    supported image is taken in lexicographic order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"not a directory: {directory}")
    if pattern is not None:
        paths, numbers = _match_pattern(directory, pattern)
    else:
        paths = sorted(
            p for p in directory.iterdir() if p.suffix.lower() in (".png", ".ppm", ".pnm")
        )
        numbers = list(range(1, len(paths) + 1))
    if not paths:
        raise ImageIOError(f"no frames found in {directory}")
    first = load_frame(paths[0])
    return FrameSource(
        paths=tuple(paths),
        file_numbers=tuple(numbers),
        width=first.shape[1],
        height=first.shape[0],
        channels=first.shape[2],
    )


def _match_pattern(directory: Path, pattern: str) -> tuple[list[Path], list[int]]:
    m = _PATTERN_RE.search(pattern)
    if m is None:
        raise ImageIOError(f"pattern {pattern!r} has no %d field")
    prefix, suffix = pattern[: m.start()], pattern[m.end() :]
    regex = re.compile(re.escape(prefix) + r"(\d+)" + re.escape(suffix) + r"$")
    found: list[tuple[int, Path]] = []
    for p in directory.iterdir():
        match = regex.match(p.name)
        if match:
            found.append((int(match.group(1)), p))
    found.sort()
    return [p for _, p in found], [n for n, _ in found]
