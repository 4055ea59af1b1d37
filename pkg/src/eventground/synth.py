"""Deterministic desk-scale scenes: moving rectangles as event streams and frames.

Events follow an edge-crossing model. Every pixel whose center is swept by a
moving box boundary fires one event at the crossing time; the leading edge
fires with the sign of (object shade - background) and the trailing edge with
the opposite sign. Stationary objects emit nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .boxes import BoxXYWH, iou
from .dataset import CLASSES, GroundingSample, SceneObject, save_dataset, split_table
from .errors import GenerationFailure, InvalidArgument
from .events import EventWindow
from .text import AttributeKind

BACKGROUND = 128
SHADES = {"dark": 40, "light": 216}
# nominal (w, h) as fractions of sensor width / height
CLASS_SIZE = {
    "car": (0.19, 0.19),
    "pedestrian": (0.0625, 0.30),
    "bike": (0.125, 0.22),
    "motorcycle": (0.156, 0.22),
    "bus": (0.34, 0.34),
    "truck": (0.25, 0.375),
    "rider": (0.094, 0.375),
}
SIZE_SCALE = {"small": (0.75, 0.9), "large": (1.1, 1.25)}
STATUSES = ("moving left", "moving right", "moving up", "moving down", "stationary")
STATUS_WEIGHTS = (0.225, 0.225, 0.225, 0.225, 0.10)
NEARBY_AREA = 0.045
NEIGHBOR_DISTANCE = 0.3
MAX_PAIR_IOU = 0.3
STATIONARY_SPEED = 0.01


@dataclass(frozen=True)
class GridConfig:
    width: int = 128
    height: int = 64
    t_a: int = 0
    t_b: int = 200_000

    @property
    def t_0(self) -> int:
        return (self.t_a + self.t_b) // 2


@dataclass
class MovingObject:
    class_label: str
    box0: BoxXYWH  # at t_a
    velocity: tuple[float, float]  # normalized displacement over the full window
    size_tag: str
    shade_tag: str

    @property
    def status_tag(self) -> str:
        vx, vy = self.velocity
        if np.hypot(vx, vy) < STATIONARY_SPEED:
            return "stationary"
        if abs(vx) >= abs(vy):
            return "moving right" if vx > 0 else "moving left"
        return "moving down" if vy > 0 else "moving up"

    @property
    def appearance_tag(self) -> str:
        return f"{self.size_tag} {self.shade_tag}"

    def box_at(self, frac: float) -> np.ndarray:
        b = self.box0.as_array()
        b[0] += self.velocity[0] * frac
        b[1] += self.velocity[1] * frac
        return b


@dataclass
class Scene:
    index: int
    grid: GridConfig
    objects: list[MovingObject]
    window: EventWindow
    frame: np.ndarray

    def gt_box(self, i: int) -> BoxXYWH:
        frac = (self.grid.t_0 - self.grid.t_a) / (self.grid.t_b - self.grid.t_a)
        return BoxXYWH.of(self.objects[i].box_at(frac))


def _inside(box: np.ndarray) -> bool:
    cx, cy, w, h = box
    return cx - w / 2 >= 0 and cy - h / 2 >= 0 and cx + w / 2 <= 1 and cy + h / 2 <= 1


def _sample_object(rng: np.random.Generator) -> Optional[MovingObject]:
    cls = CLASSES[rng.integers(len(CLASSES))]
    size_tag = ("small", "large")[rng.integers(2)]
    shade_tag = ("dark", "light")[rng.integers(2)]
    lo, hi = SIZE_SCALE[size_tag]
    scale = rng.uniform(lo, hi)
    w, h = CLASS_SIZE[cls][0] * scale, CLASS_SIZE[cls][1] * scale
    status = STATUSES[rng.choice(len(STATUSES), p=STATUS_WEIGHTS)]
    speed_x, speed_y = rng.uniform(0.08, 0.2), rng.uniform(0.15, 0.3)
    vx, vy = {
        "moving left": (-speed_x, 0.0), "moving right": (speed_x, 0.0),
        "moving up": (0.0, -speed_y), "moving down": (0.0, speed_y), "stationary": (0.0, 0.0),
    }[status]
    # center at t_0; the box must stay inside the image for the whole window
    x_lo, x_hi = w / 2 + abs(vx) / 2, 1 - w / 2 - abs(vx) / 2
    y_lo, y_hi = h / 2 + abs(vy) / 2, 1 - h / 2 - abs(vy) / 2
    if x_lo >= x_hi or y_lo >= y_hi:
        return None
    cx, cy = rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)
    box0 = np.array([cx - vx / 2, cy - vy / 2, w, h])
    if not (_inside(box0) and _inside(box0 + [vx, vy, 0, 0])):
        return None
    return MovingObject(cls, BoxXYWH.of(box0), (vx, vy), size_tag, shade_tag)


def edge_events(obj: MovingObject, grid: GridConfig) -> np.ndarray:
    """Events (x, y, t, p) fired by the object's moving boundary, unsorted."""
    vx, vy = obj.velocity
    if np.hypot(vx, vy) < STATIONARY_SPEED:
        return np.zeros((0, 4), dtype=np.int64)
    W, H = grid.width, grid.height
    span = grid.t_b - grid.t_a
    shade_sign = 1 if SHADES[obj.shade_tag] > BACKGROUND else -1
    b0 = obj.box0.as_array()
    x1, x2 = (b0[0] - b0[2] / 2) * W, (b0[0] + b0[2] / 2) * W
    y1, y2 = (b0[1] - b0[3] / 2) * H, (b0[1] + b0[3] / 2) * H
    out = []
    if vx != 0:
        speed = vx * W  # pixels per window
        rows = np.arange(H)[(np.arange(H) + 0.5 >= y1) & (np.arange(H) + 0.5 < y2)]
        lead, trail = (x2, x1) if speed > 0 else (x1, x2)
        for edge, pol in ((lead, shade_sign), (trail, -shade_sign)):
            centers = np.arange(W) + 0.5
            frac = (centers - edge) / speed
            cols = np.nonzero((frac > 0) & (frac <= 1))[0]
            for c in cols:
                t = grid.t_a + int(np.floor(frac[c] * span))
                out.extend((c, r, t, pol) for r in rows)
    else:
        speed = vy * H
        cols = np.arange(W)[(np.arange(W) + 0.5 >= x1) & (np.arange(W) + 0.5 < x2)]
        lead, trail = (y2, y1) if speed > 0 else (y1, y2)
        for edge, pol in ((lead, shade_sign), (trail, -shade_sign)):
            centers = np.arange(H) + 0.5
            frac = (centers - edge) / speed
            rows = np.nonzero((frac > 0) & (frac <= 1))[0]
            for r in rows:
                t = grid.t_a + int(np.floor(frac[r] * span))
                out.extend((c, r, t, pol) for c in cols)
    return np.array(out, dtype=np.int64).reshape(-1, 4)


def render_frame(objects: Sequence[MovingObject], grid: GridConfig) -> np.ndarray:
    """Grayscale frame at t_0: filled rectangles on a mid-gray background."""
    frame = np.full((grid.height, grid.width), BACKGROUND, dtype=np.uint8)
    frac = (grid.t_0 - grid.t_a) / (grid.t_b - grid.t_a)
    xs, ys = np.arange(grid.width) + 0.5, np.arange(grid.height) + 0.5
    for obj in objects:
        cx, cy, w, h = obj.box_at(frac)
        cols = (xs >= (cx - w / 2) * grid.width) & (xs < (cx + w / 2) * grid.width)
        rows = (ys >= (cy - h / 2) * grid.height) & (ys < (cy + h / 2) * grid.height)
        frame[np.ix_(rows, cols)] = SHADES[obj.shade_tag]
    return frame


def viewer_phrase(box: BoxXYWH) -> str:
    third = "on the left" if box.cx < 1 / 3 else ("in the center" if box.cx < 2 / 3 else "on the right")
    dist = "nearby" if box.w * box.h > NEARBY_AREA else "far away"
    return f"{dist} {third}"


def others_phrase(i: int, boxes: Sequence[BoxXYWH], classes: Sequence[str]) -> str:
    best, best_d = None, np.inf
    for j, b in enumerate(boxes):
        if j == i:
            continue
        d = float(np.hypot(b.cx - boxes[i].cx, b.cy - boxes[i].cy))
        if d < best_d:
            best, best_d = j, d
    if best is None or best_d >= NEIGHBOR_DISTANCE:
        return "away from other objects"
    return f"next to a {classes[best]}"


def describe(scene: Scene, i: int) -> tuple[tuple[str, ...], str, dict]:
    """Attribute tags, expression and cue phrases for object ``i``."""
    boxes = [scene.gt_box(j) for j in range(len(scene.objects))]
    classes = [o.class_label for o in scene.objects]
    obj = scene.objects[i]
    appearance, status = obj.appearance_tag, obj.status_tag
    viewer = viewer_phrase(boxes[i])
    others = others_phrase(i, boxes, classes)
    expression = f"the {appearance} {obj.class_label} {status}, {viewer}, {others}"
    spans = {
        AttributeKind.APPEARANCE: [appearance],
        AttributeKind.STATUS: [status],
        AttributeKind.RELATION_TO_VIEWER: [viewer],
        AttributeKind.RELATION_TO_OTHERS: [others],
    }
    return (obj.class_label, appearance, status, viewer, others), expression, spans


def build_scene(seed: int, num_objects: int, grid: GridConfig = GridConfig(), index: int = 0,
                max_retries: int = 200) -> Scene:
    """Sample a scene whose every object has a unique description."""
    if not 1 <= num_objects <= 6:
        raise InvalidArgument(f"num_objects must be in 1..6, got {num_objects}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        objects: list[MovingObject] = []
        for _ in range(50 * num_objects):
            if len(objects) == num_objects:
                break
            cand = _sample_object(rng)
            if cand is None:
                continue
            frac = 0.5
            if all(iou(cand.box_at(frac), o.box_at(frac)) <= MAX_PAIR_IOU for o in objects):
                objects.append(cand)
        if len(objects) < num_objects:
            continue
        events = [edge_events(o, grid) for o in objects]
        ev = np.concatenate(events) if events else np.zeros((0, 4), dtype=np.int64)
        window = EventWindow(ev[:, 0], ev[:, 1], ev[:, 2], ev[:, 3], grid.t_a, grid.t_b, grid.width, grid.height)
        scene = Scene(index, grid, objects, window, render_frame(objects, grid))
        tags = [describe(scene, i)[0] for i in range(num_objects)]
        if len(set(tags)) == num_objects:
            return scene
    raise GenerationFailure(f"no scene with unique descriptions after {max_retries} attempts (seed {seed})")


def scene_samples(scene: Scene, referred: Optional[Sequence[int]] = None, split: str = "train") -> list[GroundingSample]:
    objs = [SceneObject(o.class_label, scene.gt_box(i), {
        "appearance": o.appearance_tag,
        "status": o.status_tag,
        "velocity": [float(o.velocity[0]), float(o.velocity[1])],
    }) for i, o in enumerate(scene.objects)]
    out = []
    for i in (range(len(scene.objects)) if referred is None else referred):
        _, expression, spans = describe(scene, i)
        out.append(GroundingSample(f"{scene.index:06d}-{i}", scene.index, scene.window, scene.frame,
                                   scene.grid.t_0, objs, i, expression, spans, split))
    return out


def gen_scene(rng_seed: int, num_objects: int, grid: GridConfig = GridConfig()) -> GroundingSample:
    """One scene with one referred object picked by the scene's seed."""
    scene = build_scene(rng_seed, num_objects, grid)
    pick = int(np.random.default_rng([rng_seed, 1]).integers(num_objects))
    return scene_samples(scene, [pick])[0]


def gen_corpus(rng_seed: int, num_scenes: int, objects_range=(1, 6), out_path=None,
               grid: GridConfig = GridConfig(), refs_per_scene: Optional[int] = None):
    """Generate scenes (seed XOR scene index), refer to their objects, optionally write to disk.

    Every object of a scene becomes a sample unless ``refs_per_scene`` caps it.
    Returns ``(samples, manifest)``.
    """
    if num_scenes < 1:
        raise InvalidArgument("num_scenes must be >= 1")
    lo, hi = objects_range
    splits = split_table(num_scenes)
    samples = []
    for idx in range(num_scenes):
        seed = rng_seed ^ idx
        count_rng = np.random.default_rng([seed, 2])
        n = int(count_rng.integers(lo, hi + 1))
        scene = build_scene(seed, n, grid, idx)
        referred = None
        if refs_per_scene is not None and refs_per_scene < n:
            referred = sorted(count_rng.choice(n, size=refs_per_scene, replace=False).tolist())
        samples.extend(scene_samples(scene, referred, splits[idx]))
    manifest = {
        "format": "eventground.manifest",
        "version": 1,
        "seed": rng_seed,
        "scenes": num_scenes,
        "objects_min": lo,
        "objects_max": hi,
        "train_scenes": splits.count("train"),
        "val_scenes": splits.count("val"),
        "train_samples": sum(s.split == "train" for s in samples),
        "val_samples": sum(s.split == "val" for s in samples),
        "width": grid.width,
        "height": grid.height,
        "t_a": grid.t_a,
        "t_b": grid.t_b,
    }
    if out_path is not None:
        save_dataset(out_path, samples, grid.width, grid.height, manifest)
    return samples, manifest
