"""Late fusion at test time: score queries against each attribute map, keep the best box."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boxes import BoxXYWH
from .errors import InvalidArgument, NoSignal
from .matching import softmax
from .model import QueryOutput
from .text import ATTRIBUTES, SoftTokenMap


@dataclass
class GroundScore:
    scores: np.ndarray  # (Q, k)
    attributes: tuple  # column labels

    @property
    def best_attr(self) -> np.ndarray:
        return self.scores.argmax(axis=1)

    @property
    def best_score(self) -> np.ndarray:
        return self.scores.max(axis=1)


@dataclass
class GroundingResult:
    box: BoxXYWH
    query_index: int
    attribute: object
    score: float
    gate_weights: np.ndarray
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        name = getattr(self.attribute, "value", self.attribute)
        return {
            "box": [float(v) for v in self.box.as_array()],
            "query_index": int(self.query_index),
            "attribute": name,
            "score": float(self.score),
            "lambda": [float(v) for v in self.gate_weights],
            "warnings": list(self.warnings),
        }


def score_queries(output: QueryOutput, maps: Sequence[SoftTokenMap], attributes: Optional[Sequence] = None) -> GroundScore:
    """``score[n, i] = <softmax(logits_n), map_i>`` for every query and map."""
    attributes = tuple(attributes) if attributes is not None else tuple(ATTRIBUTES[:len(maps)])
    if len(attributes) != len(maps):
        raise InvalidArgument("one attribute label per map is required")
    n_tok = output.token_logits.shape[1]
    probs = []
    for m in maps:
        if len(m) != n_tok:
            raise InvalidArgument(f"token map length {len(m)} differs from logit width {n_tok}")
        probs.append(np.asarray(m.probs, dtype=np.float64))
    mat = np.stack(probs)
    if not np.any(mat.sum(axis=1) > 0):
        raise NoSignal("every attribute map is empty")
    return GroundScore(softmax(output.token_logits) @ mat.T, attributes)


def select_box(table: GroundScore, output: QueryOutput) -> GroundingResult:
    """Argmax over (query, attribute); ties go to the lower query, then the lower attribute."""
    if table.scores.size == 0:
        raise InvalidArgument("empty score table")
    n, i = np.unravel_index(int(np.argmax(table.scores)), table.scores.shape)
    b = np.clip(output.boxes[n], 0.0, 1.0)
    b[2:] = np.maximum(b[2:], 1e-4)
    return GroundingResult(BoxXYWH.of(b), int(n), table.attributes[i], float(table.scores[n, i]),
                           np.asarray(output.lam, dtype=np.float64).copy())
