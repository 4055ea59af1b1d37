"""Event streams, polarity-split voxel grids and event response strength."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import DatasetError, InvalidArgument, InvalidWindow

EVENT_MAGIC = b"EVT0"
HEADER = struct.Struct("<4sHHI4x")
EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "i1")])
NUM_STRENGTH_BINS = 7


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise InvalidArgument(f"polarity must be -1 or +1, got {self.p}")
        if self.x < 0 or self.y < 0:
            raise InvalidArgument("event coordinates must be non-negative")


class EventWindow:
    """Events observed between ``t_a`` and ``t_b`` (inclusive, microseconds).

    Stored column-wise; events are stably sorted by timestamp on construction.
    """

    def __init__(self, x, y, t, p, t_a: int, t_b: int, width: int, height: int):
        t_a, t_b = int(t_a), int(t_b)
        if t_a >= t_b:
            raise InvalidWindow(f"window start {t_a} must precede end {t_b}")
        x = np.asarray(x, dtype=np.int64).ravel()
        y = np.asarray(y, dtype=np.int64).ravel()
        t = np.asarray(t, dtype=np.int64).ravel()
        p = np.asarray(p, dtype=np.int8).ravel()
        if not (len(x) == len(y) == len(t) == len(p)):
            raise InvalidArgument("event columns differ in length")
        if len(t):
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                raise InvalidArgument("event coordinates outside the sensor")
            if not np.all((p == 1) | (p == -1)):
                raise InvalidArgument("polarity must be -1 or +1")
        order = np.argsort(t, kind="stable")
        self.x, self.y, self.t, self.p = x[order], y[order], t[order], p[order]
        for arr in (self.x, self.y, self.t, self.p):
            arr.setflags(write=False)
        self.t_a, self.t_b = t_a, t_b
        self.width, self.height = int(width), int(height)

    @classmethod
    def from_events(cls, events: Sequence[Event], t_a, t_b, width, height) -> "EventWindow":
        cols = np.array([(e.x, e.y, e.t, e.p) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], t_a, t_b, width, height)

    @classmethod
    def empty(cls, t_a, t_b, width, height) -> "EventWindow":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, t_a, t_b, width, height)

    def __len__(self):
        return len(self.t)

    def events(self):
        return [Event(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(self.x, self.y, self.t, self.p)]

    def in_window(self) -> np.ndarray:
        return (self.t >= self.t_a) & (self.t <= self.t_b)


@dataclass(frozen=True)
class VoxelGrid:
    """Count tensor of shape (2, bins, height, width); channel 0 holds p = -1."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[0] != 2:
            raise InvalidArgument(f"voxel grid must be 2xTxHxW, got {self.data.shape}")
        self.data.setflags(write=False)

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def total(self) -> int:
        return int(self.data.sum())


def voxelize(window: EventWindow, bins: int, workers: int = 1) -> VoxelGrid:
    """Bin a window's events into a polarity-split spatiotemporal count grid.

    The temporal bin is ``floor((t - t_a) * bins / (t_b - t_a))`` in exact
    integer arithmetic, with ``t == t_b`` clamped into the last bin. Events
    outside ``[t_a, t_b]`` are ignored. With ``workers > 1`` the stream is split
    into contiguous chunks whose grids are summed in chunk order.
    """
    if int(bins) < 1:
        raise InvalidArgument(f"bins must be >= 1, got {bins}")
    if window.t_a >= window.t_b:
        raise InvalidWindow("empty observation window")
    bins = int(bins)
    args = (window.t_a, window.t_b, bins, window.height, window.width)
    if workers <= 1 or len(window) < 2 * workers:
        data = kernels.voxelize_counts(window.x, window.y, window.t, window.p, *args)
        return VoxelGrid(data)
    bounds = np.linspace(0, len(window), workers + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda s: kernels.voxelize_counts(window.x[s], window.y[s], window.t[s], window.p[s], *args),
            chunks,
        ))
    data = parts[0].copy()
    for part in parts[1:]:
        data += part
    return VoxelGrid(data)


@dataclass(frozen=True)
class ResponseStrength:
    raw: int
    normalized: Optional[float] = field(default=None)


def response_strength(grid: VoxelGrid) -> ResponseStrength:
    """Number of activated (non-zero) voxels, counting positions not magnitudes."""
    return ResponseStrength(int(np.count_nonzero(grid.data > 0)))


def normalize_strengths(strengths: Sequence[ResponseStrength]) -> list[ResponseStrength]:
    """Min-max scale raw strengths over the given corpus; a flat corpus maps to 0."""
    if len(strengths) == 0:
        raise InvalidArgument("cannot normalize an empty set of strengths")
    raws = [s.raw for s in strengths]
    lo, hi = min(raws), max(raws)
    if hi == lo:
        return [ResponseStrength(r, 0.0) for r in raws]
    return [ResponseStrength(r, (r - lo) / (hi - lo)) for r in raws]


def strength_bin(normalized: float) -> int:
    """Seven equal-width bins over [0, 1], numbered 1..7; 1.0 falls in bin 7."""
    value = float(normalized)
    if not 0.0 <= value <= 1.0:
        raise InvalidArgument(f"normalized strength {value} outside [0, 1]")
    k = NUM_STRENGTH_BINS
    i = int(np.floor(value * k)) + 1
    # align with the (i-1)/k <= v < i/k comparison where v*k rounds across an edge
    if i <= k and value >= i / k:
        i += 1
    elif i > 1 and value < (i - 1) / k:
        i -= 1
    return min(i, k)


# -- serialization -------------------------------------------------------------

def encode_events(window: EventWindow) -> bytes:
    rec = np.empty(len(window), dtype=EVENT_DTYPE)
    rec["x"], rec["y"], rec["t"], rec["p"] = window.x, window.y, window.t, window.p
    return HEADER.pack(EVENT_MAGIC, window.width, window.height, len(window)) + rec.tobytes()


def decode_events(blob: bytes, t_a: Optional[int] = None, t_b: Optional[int] = None) -> EventWindow:
    """Parse the binary event stream. Without explicit bounds the window spans the data."""
    if len(blob) < HEADER.size:
        raise DatasetError("event blob shorter than its header")
    magic, width, height, count = HEADER.unpack_from(blob)
    if magic != EVENT_MAGIC:
        raise DatasetError(f"bad event magic {magic!r}")
    need = HEADER.size + count * EVENT_DTYPE.itemsize
    if len(blob) != need:
        raise DatasetError(f"event blob holds {len(blob)} bytes, header promises {need}")
    rec = np.frombuffer(blob, dtype=EVENT_DTYPE, count=count, offset=HEADER.size)
    return _window_from_columns(rec["x"], rec["y"], rec["t"], rec["p"], t_a, t_b, width, height)


def _window_from_columns(x, y, t, p, t_a, t_b, width, height):
    if t_a is None:
        t_a = int(t.min()) if len(t) else 0
    if t_b is None:
        t_b = int(t.max()) if len(t) else t_a + 1
        if t_b <= t_a:
            t_b = t_a + 1
    return EventWindow(x, y, t, p, t_a, t_b, width, height)


def events_from_json(doc: dict) -> EventWindow:
    """Fixture form: ``{"width", "height", "events": [{"x","y","t","p"}, ...]}``."""
    evs = doc.get("events", [])
    cols = np.array([(e["x"], e["y"], e["t"], e["p"]) for e in evs], dtype=np.int64).reshape(-1, 4)
    return _window_from_columns(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3],
                                doc.get("t_a"), doc.get("t_b"), doc["width"], doc["height"])


def events_to_json(window: EventWindow) -> dict:
    return {
        "width": window.width,
        "height": window.height,
        "t_a": window.t_a,
        "t_b": window.t_b,
        "events": [{"x": int(a), "y": int(b), "t": int(c), "p": int(d)}
                   for a, b, c, d in zip(window.x, window.y, window.t, window.p)],
    }


def read_events(path, t_a=None, t_b=None) -> EventWindow:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if t_a is not None:
            doc["t_a"] = t_a
        if t_b is not None:
            doc["t_b"] = t_b
        return events_from_json(doc)
    return decode_events(path.read_bytes(), t_a, t_b)


def write_events(path, window: EventWindow) -> None:
    Path(path).write_bytes(encode_events(window))
