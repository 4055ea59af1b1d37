"""Normalized (cx, cy, w, h) boxes: IoU, GIoU and GIoU's analytic gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class BoxXYWH:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidArgument(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidArgument(f"box needs positive width and height, got {vals}")
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise InvalidArgument(f"box coordinates must be normalized to [0, 1], got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @classmethod
    def of(cls, values) -> "BoxXYWH":
        cx, cy, w, h = (float(v) for v in values)
        return cls(cx, cy, w, h)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


def real_array(x) -> np.ndarray:
    """``x`` as a float array of at least double precision (extended precision passes through)."""
    x = np.asarray(x)
    return x.astype(np.result_type(x.dtype, np.float64), copy=False)


def _arr(box) -> np.ndarray:
    if isinstance(box, BoxXYWH):
        return box.as_array()
    return real_array(box)


def to_corners(box) -> np.ndarray:
    b = _arr(box)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def from_corners(x1, y1, x2, y2) -> np.ndarray:
    return np.array([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], dtype=np.float64)


def _parts(a, b):
    ca, cb = to_corners(a), to_corners(b)
    iw = np.clip(np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]), 0, None)
    ih = np.clip(np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]), 0, None)
    inter = iw * ih
    area_a = (ca[..., 2] - ca[..., 0]) * (ca[..., 3] - ca[..., 1])
    area_b = (cb[..., 2] - cb[..., 0]) * (cb[..., 3] - cb[..., 1])
    union = area_a + area_b - inter
    cw = np.maximum(ca[..., 2], cb[..., 2]) - np.minimum(ca[..., 0], cb[..., 0])
    ch = np.maximum(ca[..., 3], cb[..., 3]) - np.minimum(ca[..., 1], cb[..., 1])
    return inter, union, cw * ch


def iou(a, b):
    """Intersection over union; broadcasts over leading axes."""
    inter, union, _ = _parts(a, b)
    out = inter / union
    return float(out) if np.ndim(out) == 0 else out


def giou(a, b):
    """Generalized IoU: ``IoU - (enclosure - union) / enclosure``, in (-1, 1]."""
    inter, union, enc = _parts(a, b)
    out = inter / union - (enc - union) / enc
    return float(out) if np.ndim(out) == 0 else out


def giou_with_grad(pred: np.ndarray, target: np.ndarray):
    """GIoU of each row of ``pred`` (N, 4) against one ``target`` box, plus d giou / d pred."""
    pred = np.atleast_2d(real_array(pred))
    t = to_corners(target)
    c = to_corners(pred)
    ax1, ay1, ax2, ay2 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    bx1, by1, bx2, by2 = t
    w, h = ax2 - ax1, ay2 - ay1

    ix = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    iy = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    ox, oy = ix > 0, iy > 0
    iw, ih = np.where(ox, ix, 0.0), np.where(oy, iy, 0.0)
    inter = iw * ih
    union = w * h + (bx2 - bx1) * (by2 - by1) - inter
    cw = np.maximum(ax2, bx2) - np.minimum(ax1, bx1)
    ch = np.maximum(ay2, by2) - np.minimum(ay1, by1)
    enc = cw * ch
    value = inter / union - 1.0 + union / enc

    # derivatives with respect to the corner coordinates (x1, y1, x2, y2)
    f = lambda m: m.astype(np.float64)  # noqa: E731
    zero = np.zeros_like(w)
    d_iw = np.stack([-f(ox & (ax1 > bx1)), zero, f(ox & (ax2 < bx2)), zero], axis=1)
    d_ih = np.stack([zero, -f(oy & (ay1 > by1)), zero, f(oy & (ay2 < by2))], axis=1)
    d_cw = np.stack([-f(ax1 <= bx1), zero, f(ax2 >= bx2), zero], axis=1)
    d_ch = np.stack([zero, -f(ay1 <= by1), zero, f(ay2 >= by2)], axis=1)
    d_area = np.stack([-h, -w, h, w], axis=1)
    d_inter = ih[:, None] * d_iw + iw[:, None] * d_ih
    d_union = d_area - d_inter
    d_enc = ch[:, None] * d_cw + cw[:, None] * d_ch
    u, e = union[:, None], enc[:, None]
    d_corner = (d_inter * u - inter[:, None] * d_union) / u**2 + (d_union * e - u * d_enc) / e**2

    grad = np.empty_like(pred)
    grad[:, 0] = d_corner[:, 0] + d_corner[:, 2]
    grad[:, 1] = d_corner[:, 1] + d_corner[:, 3]
    grad[:, 2] = 0.5 * (d_corner[:, 2] - d_corner[:, 0])
    grad[:, 3] = 0.5 * (d_corner[:, 3] - d_corner[:, 1])
    return value, grad
