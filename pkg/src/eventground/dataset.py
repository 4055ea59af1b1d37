"""Grounding samples and the on-disk dataset container (JSON index + binary blobs)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boxes import BoxXYWH
from .errors import DatasetError, InvalidArgument, InvariantViolation, MissingFile, VersionMismatch
from .events import EventWindow, decode_events, encode_events
from .text import ATTRIBUTES, AttributeKind, tokenize

DATASET_FORMAT = "eventground.dataset"
DATASET_VERSION = 1
INDEX_NAME = "index.json"
MANIFEST_NAME = "manifest.txt"
CLASSES = ("car", "pedestrian", "bike", "motorcycle", "bus", "truck", "rider")


@dataclass
class SceneObject:
    class_label: str
    box: BoxXYWH
    tags: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"class": self.class_label, "box": list(self.box.as_array()), **self.tags}

    @classmethod
    def from_json(cls, doc: dict) -> "SceneObject":
        tags = {k: v for k, v in doc.items() if k not in ("class", "box")}
        return cls(doc["class"], BoxXYWH.of(doc["box"]), tags)


@dataclass(eq=False)
class GroundingSample:
    """One referring expression over one scene (event window + optional frame)."""

    sample_id: str
    scene: int
    window: EventWindow
    frame: Optional[np.ndarray]
    t_0: int
    objects: list[SceneObject]
    referred_index: int
    expression: str
    spans: dict  # AttributeKind -> list[str]
    split: str = "train"

    @property
    def gt_box(self) -> BoxXYWH:
        return self.objects[self.referred_index].box

    @property
    def class_label(self) -> str:
        return self.objects[self.referred_index].class_label

    def __eq__(self, other):
        if not isinstance(other, GroundingSample):
            return NotImplemented
        w, o = self.window, other.window
        same_window = (
            (w.t_a, w.t_b, w.width, w.height) == (o.t_a, o.t_b, o.width, o.height)
            and all(np.array_equal(a, b) for a, b in ((w.x, o.x), (w.y, o.y), (w.t, o.t), (w.p, o.p)))
        )
        same_frame = (self.frame is None and other.frame is None) or (
            self.frame is not None and other.frame is not None and np.array_equal(self.frame, other.frame))
        return (same_window and same_frame
                and (self.sample_id, self.scene, self.t_0, self.referred_index, self.expression, self.split)
                == (other.sample_id, other.scene, other.t_0, other.referred_index, other.expression, other.split)
                and [o.to_json() for o in self.objects] == [o.to_json() for o in other.objects]
                and _spans_json(self.spans) == _spans_json(other.spans))


def _spans_json(spans) -> dict:
    return {kind.value: list(spans.get(kind, [])) for kind in ATTRIBUTES}


def _spans_from_json(doc) -> dict:
    out = {kind: [] for kind in ATTRIBUTES}
    for key, cues in (doc or {}).items():
        kind = AttributeKind.parse(key)
        if not isinstance(cues, list) or not all(isinstance(c, str) and c.strip() for c in cues):
            raise InvalidArgument(f"cue phrases for {key} must be non-empty strings")
        out[kind] = list(cues)
    return out


def split_of(scene_index: int, num_scenes: int, train_fraction: float = 0.8) -> str:
    """Deterministic train/val split: scenes ranked by index hash, first 80% train."""
    ranked = sorted(range(num_scenes), key=lambda i: hashlib.sha256(str(i).encode()).hexdigest())
    n_train = int(round(train_fraction * num_scenes))
    return "train" if ranked.index(scene_index) < n_train else "val"


def split_table(num_scenes: int, train_fraction: float = 0.8) -> list[str]:
    ranked = sorted(range(num_scenes), key=lambda i: hashlib.sha256(str(i).encode()).hexdigest())
    n_train = int(round(train_fraction * num_scenes))
    splits = ["val"] * num_scenes
    for i in ranked[:n_train]:
        splits[i] = "train"
    return splits


def save_dataset(path, samples: Sequence[GroundingSample], width: int, height: int,
                 manifest: Optional[dict] = None) -> Path:
    """Write ``index.json`` plus one event blob and one frame blob per scene."""
    root = Path(path)
    (root / "events").mkdir(parents=True, exist_ok=True)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    written = set()
    entries = []
    for s in samples:
        ev_rel = f"events/{s.scene:06d}.evt"
        fr_rel = f"frames/{s.scene:06d}.gray" if s.frame is not None else None
        if s.scene not in written:
            (root / ev_rel).write_bytes(encode_events(s.window))
            if fr_rel:
                (root / fr_rel).write_bytes(np.ascontiguousarray(s.frame, dtype=np.uint8).tobytes())
            written.add(s.scene)
        entries.append({
            "id": s.sample_id,
            "scene": s.scene,
            "split": s.split,
            "events": ev_rel,
            "frame": fr_rel,
            "t_a": s.window.t_a,
            "t_0": s.t_0,
            "t_b": s.window.t_b,
            "objects": [o.to_json() for o in s.objects],
            "referred_index": s.referred_index,
            "expression": s.expression,
            "cues": _spans_json(s.spans),
        })
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "sensor": {"width": width, "height": height},
        "samples": entries,
    }
    (root / INDEX_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    if manifest is not None:
        lines = [f"{k}={v}" for k, v in manifest.items()]
        (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return root


def read_manifest(path) -> dict:
    p = Path(path)
    p = p / MANIFEST_NAME if p.is_dir() else p
    if not p.exists():
        return {}
    out = {}
    for line in p.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def dataset_hash(path) -> str:
    """SHA-256 of the index document, used to tie checkpoints to corpora."""
    p = Path(path)
    p = p / INDEX_NAME if p.is_dir() else p
    return hashlib.sha256(p.read_bytes()).hexdigest() if p.exists() else ""


def load_dataset(path, split: Optional[str] = None) -> list[GroundingSample]:
    """Load and validate every sample; fails fast naming the first bad sample index."""
    root = Path(path)
    index = root / INDEX_NAME if root.is_dir() else root
    if not index.exists():
        raise MissingFile(f"dataset index not found: {index}")
    root = index.parent
    try:
        doc = json.loads(index.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"dataset index is not valid JSON: {exc}") from exc
    if doc.get("format") != DATASET_FORMAT:
        raise DatasetError(f"not an eventground dataset: format={doc.get('format')!r}")
    if doc.get("version") != DATASET_VERSION:
        raise VersionMismatch(f"dataset version {doc.get('version')!r} unsupported (expected {DATASET_VERSION})")
    width, height = int(doc["sensor"]["width"]), int(doc["sensor"]["height"])
    windows: dict = {}
    frames: dict = {}
    out = []
    for i, entry in enumerate(doc.get("samples", [])):
        if split is not None and entry.get("split") != split:
            continue
        try:
            out.append(_load_sample(root, entry, width, height, windows, frames))
        except InvariantViolation:
            raise
        except (DatasetError, InvalidArgument, KeyError, TypeError, ValueError) as exc:
            raise InvariantViolation(f"{type(exc).__name__}: {exc}", i) from exc
    return out


def _load_sample(root, entry, width, height, windows, frames) -> GroundingSample:
    t_a, t_0, t_b = int(entry["t_a"]), int(entry["t_0"]), int(entry["t_b"])
    if not t_a <= t_0 <= t_b:
        raise InvalidArgument("t_0 must lie inside the window")
    ev = entry["events"]
    if isinstance(ev, list):
        cols = np.array(ev, dtype=np.int64).reshape(-1, 4)
        window = EventWindow(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], t_a, t_b, width, height)
    else:
        key = (ev, t_a, t_b)
        if key not in windows:
            blob_path = root / ev
            if not blob_path.exists():
                raise MissingFile(f"event blob missing: {ev}")
            window = decode_events(blob_path.read_bytes(), t_a, t_b)
            if (window.width, window.height) != (width, height):
                raise InvalidArgument("event blob geometry differs from the dataset sensor")
            windows[key] = window
        window = windows[key]
    frame = None
    fr = entry.get("frame")
    if fr:
        if fr not in frames:
            blob_path = root / fr
            if not blob_path.exists():
                raise MissingFile(f"frame blob missing: {fr}")
            raw = blob_path.read_bytes()
            if len(raw) != width * height:
                raise DatasetError(f"frame blob {fr} holds {len(raw)} bytes, expected {width * height}")
            arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
            arr.setflags(write=False)
            frames[fr] = arr
        frame = frames[fr]
    objects = [SceneObject.from_json(o) for o in entry["objects"]]
    for o in objects:
        if o.class_label not in CLASSES:
            raise InvalidArgument(f"unknown class {o.class_label!r}")
    ref = int(entry["referred_index"])
    if not 0 <= ref < len(objects):
        raise InvalidArgument(f"referred_index {ref} out of range")
    tokenize(entry["expression"])
    spans = _spans_from_json(entry.get("cues"))
    split = entry.get("split", "train")
    if split not in ("train", "val"):
        raise InvalidArgument(f"unknown split {split!r}")
    return GroundingSample(str(entry["id"]), int(entry["scene"]), window, frame, t_0, objects, ref,
                           entry["expression"], spans, split)
