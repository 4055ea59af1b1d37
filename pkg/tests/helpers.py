"""Shared fixtures: the hand-computed metrics records and small model builders."""

from fractions import Fraction

import numpy as np

from eventground.boxes import BoxXYWH, from_corners
from eventground.metrics import EvalRecord


def corners(x1, y1, x2, y2):
    return BoxXYWH.of(from_corners(x1, y1, x2, y2))


def hand_records():
    """Five records whose IoUs are dyadic: 1, 31/32, 3/4, 1/2, 0.

    Returns the records and the exact expected values (top1@0.95, top1@0.5, mIoU)
    as fractions; IoU = 1/2 fails the strict test at theta = 0.5.
    """
    quarter = corners(0, 0, 0.5, 0.5)
    full = corners(0, 0, 1, 1)
    records = [
        EvalRecord(quarter, quarter, "car", 1, 1, np.array([0.7, 0.1, 0.1, 0.1])),
        EvalRecord(corners(0, 0, 1, 0.96875), full, "car", 2, 7, np.array([0.1, 0.7, 0.1, 0.1])),
        EvalRecord(corners(0, 0, 0.5, 0.375), quarter, "bus", 3, 4, np.array([0.1, 0.1, 0.7, 0.1])),
        EvalRecord(corners(0, 0, 0.5, 0.25), quarter, "pedestrian", 3, 4, np.array([0.1, 0.1, 0.1, 0.7])),
        EvalRecord(corners(0.75, 0.75, 1, 1), quarter, "pedestrian", 1, 7, np.array([0.25] * 4)),
    ]
    ious = [Fraction(1), Fraction(31, 32), Fraction(3, 4), Fraction(1, 2), Fraction(0)]
    expected = {
        "ious": ious,
        "top1_095": Fraction(sum(v > Fraction(95, 100) for v in ious), 5),
        "top1_05": Fraction(sum(v > Fraction(1, 2) for v in ious), 5),
        "miou": sum(ious) / 5,
    }
    return records, expected
