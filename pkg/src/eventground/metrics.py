"""Top-1 accuracy at an IoU threshold, mean IoU, and stratified breakdowns."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boxes import BoxXYWH, iou
from .errors import InvalidArgument, UndefinedMetric
from .events import NUM_STRENGTH_BINS
from .text import ATTRIBUTES

REPORT_FORMAT = "eventground.report"
REPORT_VERSION = 1
DEFAULT_THETA = 0.95
STANDARD_THRESHOLDS = (0.5, 0.95)
CLASS_ORDER = ("car", "pedestrian", "bike", "motorcycle", "bus", "truck", "rider")


@dataclass
class EvalRecord:
    predicted: BoxXYWH
    truth: BoxXYWH
    class_label: str
    objects_in_scene: int = 1
    strength_bin: Optional[int] = None
    gate_weights: Optional[np.ndarray] = None
    attribute: object = None

    def __post_init__(self):
        if self.class_label not in CLASS_ORDER:
            raise InvalidArgument(f"unknown class {self.class_label!r}")
        if self.objects_in_scene < 1:
            raise InvalidArgument("objects_in_scene must be >= 1")

    @property
    def iou(self) -> float:
        return iou(self.predicted, self.truth)


def _require(records):
    if len(records) == 0:
        raise UndefinedMetric("metric over zero records is undefined")


def top1_acc(records: Sequence[EvalRecord], theta: float = DEFAULT_THETA) -> float:
    """Fraction of records whose IoU is strictly greater than ``theta``."""
    _require(records)
    if not 0.0 < theta < 1.0:
        raise InvalidArgument(f"theta must lie in (0, 1), got {theta}")
    return sum(r.iou > theta for r in records) / len(records)


def miou(records: Sequence[EvalRecord]) -> float:
    _require(records)
    return float(np.mean([r.iou for r in records]))


def _summary(records, theta) -> dict:
    return {
        "count": len(records),
        "top1": top1_acc(records, theta),
        "miou": miou(records),
        "top1_at": {str(t): top1_acc(records, t) for t in STANDARD_THRESHOLDS},
    }


def _attr_name(i: int) -> str:
    return ATTRIBUTES[i].value


def _profile(lams: np.ndarray) -> dict:
    mean = lams.mean(axis=0)
    # stable sort keeps the fixed attribute order on ties
    order = np.argsort(-mean, kind="stable")
    return {
        "count": int(len(lams)),
        "mean_lambda": [float(v) for v in mean],
        "top1": _attr_name(int(order[0])),
        "top2": _attr_name(int(order[1])),
    }


def expert_activation_profile(records: Sequence[EvalRecord]) -> dict:
    """Mean gate weights and top-1/top-2 attributes per strength bin and per class."""
    _require(records)
    by_bin, by_class = defaultdict(list), defaultdict(list)
    for r in records:
        if r.gate_weights is None:
            raise InvalidArgument("record lacks gate weights")
        lam = np.asarray(r.gate_weights, dtype=np.float64)
        if r.strength_bin is not None:
            by_bin[r.strength_bin].append(lam)
        by_class[r.class_label].append(lam)
    return {
        "per_strength_bin": {str(b): _profile(np.stack(by_bin[b])) for b in sorted(by_bin)},
        "per_class": {c: _profile(np.stack(by_class[c])) for c in CLASS_ORDER if c in by_class},
    }


@dataclass
class MetricsReport:
    theta: float
    overall: dict
    per_class: dict
    per_complexity: dict
    per_strength_bin: dict
    expert_profile: dict = field(default_factory=dict)

    @property
    def top1(self) -> float:
        return self.overall["top1"]

    @property
    def macc(self) -> float:
        return self.overall["macc"]

    @property
    def miou(self) -> float:
        return self.overall["miou"]

    def to_json(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "theta": self.theta,
            "overall": self.overall,
            "per_class": self.per_class,
            "per_complexity": self.per_complexity,
            "per_strength_bin": self.per_strength_bin,
            "expert_profile": self.expert_profile,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "MetricsReport":
        if doc.get("format") != REPORT_FORMAT:
            raise InvalidArgument("not an eventground report")
        if doc.get("version") != REPORT_VERSION:
            raise InvalidArgument(f"unsupported report version {doc.get('version')!r}")
        return cls(doc["theta"], doc["overall"], doc["per_class"], doc["per_complexity"],
                   doc["per_strength_bin"], doc.get("expert_profile", {}))

    def table(self) -> str:
        o = self.overall
        lines = [
            f"records {o['count']}  theta {self.theta:g}",
            f"top1 (sample mean) {o['top1']:.4f}   mAcc (class mean) {o['macc']:.4f}   mIoU {o['miou']:.4f}",
            "",
            f"{'class':<12}{'n':>6}{'top1':>9}{'mIoU':>9}",
        ]
        for name, s in self.per_class.items():
            lines.append(f"{name:<12}{s['count']:>6}{s['top1']:>9.4f}{s['miou']:>9.4f}")
        lines += ["", f"{'objects':<12}{'n':>6}{'top1':>9}{'mIoU':>9}"]
        for key, s in self.per_complexity.items():
            lines.append(f"{key:<12}{s['count']:>6}{s['top1']:>9.4f}{s['miou']:>9.4f}")
        if self.per_strength_bin:
            lines += ["", f"{'strength':<12}{'n':>6}{'top1':>9}{'mIoU':>9}  top-1/top-2 expert"]
            for key, s in self.per_strength_bin.items():
                experts = f"{s.get('top1_expert', '-')}/{s.get('top2_expert', '-')}"
                lines.append(f"{key:<12}{s['count']:>6}{s['top1']:>9.4f}{s['miou']:>9.4f}  {experts}")
        return "\n".join(lines) + "\n"


def report(records: Sequence[EvalRecord], theta: float = DEFAULT_THETA) -> MetricsReport:
    """Overall, per-class, per-complexity and per-strength-bin aggregates.

    ``overall.top1`` averages over records; ``overall.macc`` is the unweighted
    mean of per-class top1.
    """
    _require(records)
    overall = _summary(records, theta)
    groups = defaultdict(list)
    for r in records:
        groups[r.class_label].append(r)
    per_class = {c: _summary(groups[c], theta) for c in CLASS_ORDER if c in groups}
    overall["macc"] = float(np.mean([s["top1"] for s in per_class.values()]))
    overall["mmiou"] = float(np.mean([s["miou"] for s in per_class.values()]))

    by_objects = defaultdict(list)
    for r in records:
        by_objects[r.objects_in_scene].append(r)
    per_complexity = {str(k): _summary(by_objects[k], theta) for k in sorted(by_objects)}

    per_bin = {}
    binned = defaultdict(list)
    for r in records:
        if r.strength_bin is not None:
            if not 1 <= r.strength_bin <= NUM_STRENGTH_BINS:
                raise InvalidArgument(f"strength bin {r.strength_bin} outside 1..{NUM_STRENGTH_BINS}")
            binned[r.strength_bin].append(r)
    for b in sorted(binned):
        entry = _summary(binned[b], theta)
        lams = [r.gate_weights for r in binned[b] if r.gate_weights is not None]
        if lams:
            prof = _profile(np.stack(lams))
            entry["mean_lambda"] = prof["mean_lambda"]
            entry["top1_expert"], entry["top2_expert"] = prof["top1"], prof["top2"]
        per_bin[str(b)] = entry

    profile = {}
    if all(r.gate_weights is not None for r in records):
        profile = expert_activation_profile(records)
    return MetricsReport(theta, overall, per_class, per_complexity, per_bin, profile)
