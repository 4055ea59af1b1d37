"""Pseudo-target matching: pair costs, Hungarian assignment and the training loss.

The single ground-truth box is duplicated into one pseudo-target per attribute
token map. Queries are assigned to pseudo-targets by minimum total cost and the
loss is the sum of the assigned pair costs, with the assignment held fixed
during backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .boxes import BoxXYWH, giou_with_grad, real_array
from .errors import InvalidArgument, InvalidConfiguration, InvalidTarget
from .text import SoftTokenMap


@dataclass(frozen=True)
class LossWeights:
    beta_box: float = 2.0
    beta_attr: float = 1.0


@dataclass(frozen=True)
class PseudoTargetSet:
    box: BoxXYWH
    token_maps: tuple[SoftTokenMap, ...]

    def __post_init__(self):
        if not self.token_maps:
            raise InvalidArgument("pseudo-target set needs at least one token map")
        if len({len(m) for m in self.token_maps}) != 1:
            raise InvalidArgument("pseudo-target token maps differ in length")

    def __len__(self):
        return len(self.token_maps)

    def map_matrix(self) -> np.ndarray:
        return np.stack([m.probs for m in self.token_maps])


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray  # (queries, targets)
    beta_box: float = 2.0
    beta_attr: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise InvalidArgument("cost matrix must be 2-D")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgument("cost matrix has non-finite entries")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class Assignment:
    query_of_target: tuple[int, ...]
    total_cost: float

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """(target, query) pairs in target order."""
        return list(enumerate(self.query_of_target))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _check_target(probs: np.ndarray):
    total = probs.sum()
    if total <= 0:
        raise InvalidTarget("token target map is empty; substitute the public-context map first")
    if abs(total - 1.0) > 1e-9:
        raise InvalidTarget(f"token target map sums to {total}, expected 1")


def attr_alignment_loss(logits, target) -> float:
    """Cross-entropy of a token-logit row against a soft token map."""
    probs = target.probs if isinstance(target, SoftTokenMap) else np.asarray(target, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != probs.shape:
        raise InvalidArgument("logits and target differ in length")
    _check_target(probs)
    return float(-(probs * log_softmax(logits)).sum())


def l1_distance(a, b) -> float:
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def pair_cost(pred_box, logits, target_box, target_map, weights: LossWeights = LossWeights()) -> float:
    """``beta_box * (L1 + 1 - GIoU) + beta_attr * cross-entropy``."""
    pb = np.asarray(pred_box.as_array() if isinstance(pred_box, BoxXYWH) else pred_box, dtype=np.float64)
    tb = target_box.as_array() if isinstance(target_box, BoxXYWH) else np.asarray(target_box, dtype=np.float64)
    g, _ = giou_with_grad(pb[None], tb)
    box_term = l1_distance(pb, tb) + 1.0 - float(g[0])
    return weights.beta_box * box_term + weights.beta_attr * attr_alignment_loss(logits, target_map)


def cost_matrix(boxes: np.ndarray, logits: np.ndarray, targets: PseudoTargetSet,
                weights: LossWeights = LossWeights()) -> CostMatrix:
    """Queries x pseudo-targets matrix of pair costs."""
    tb = targets.box.as_array()
    maps = targets.map_matrix()
    for row in maps:
        _check_target(row)
    l1 = np.abs(boxes - tb).sum(axis=1)
    g, _ = giou_with_grad(boxes, tb)
    box_term = (l1 + 1.0 - g)[:, None]
    ce = -log_softmax(logits) @ maps.T
    return CostMatrix(weights.beta_box * box_term + weights.beta_attr * ce, weights.beta_box, weights.beta_attr)


def _ordered_sum(cost: np.ndarray, cols) -> float:
    total = 0.0
    for i, n in enumerate(cols):
        total += float(cost[i, n])
    return total


def solve_assignment(cost) -> tuple[list[int], float]:
    """Assign each row (target) to a distinct column (query) at minimum total cost.

    Among optimal assignments the lexicographically smallest column sequence
    wins. Totals are summed in row order.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    k, q = cost.shape
    if k > q:
        raise InvalidConfiguration(f"{k} targets cannot be matched to {q} queries")
    if k == 0:
        return [], 0.0
    cols = [int(c) for c in kernels.hungarian(cost)]
    best = _ordered_sum(cost, cols)
    slack = 1e-9 * (1.0 + abs(best))
    row_min = cost.min(axis=1)
    for i in range(k):
        taken = set(cols[:i])
        fixed_cost = sum(float(cost[j, cols[j]]) for j in range(i))
        optimistic_rest = float(row_min[i + 1:].sum())
        for n in range(cols[i]):
            if n in taken or fixed_cost + cost[i, n] + optimistic_rest > best + slack:
                continue
            free_cols = [c for c in range(q) if c not in taken and c != n]
            cand = cols[:i] + [n]
            if i + 1 < k:
                sub = kernels.hungarian(np.ascontiguousarray(cost[i + 1:][:, free_cols]))
                cand += [free_cols[int(c)] for c in sub]
            total = _ordered_sum(cost, cand)
            if total <= best:
                cols, best = cand, total
                break
    return cols, best


def hungarian_assign(costs: CostMatrix) -> Assignment:
    q, k = costs.values.shape
    if q < k:
        raise InvalidConfiguration(f"need at least {k} queries for {k} pseudo-targets, got {q}")
    cols, total = solve_assignment(costs.values.T)
    return Assignment(tuple(cols), total)


@dataclass
class LossResult:
    total: float
    assignment: Assignment
    box_l1: float
    giou_term: float
    attr: float
    grad_boxes: np.ndarray = field(repr=False)
    grad_logits: np.ndarray = field(repr=False)


def total_loss(boxes: np.ndarray, logits: np.ndarray, targets: PseudoTargetSet,
               weights: LossWeights = LossWeights(), assignment: Optional[Assignment] = None) -> LossResult:
    """Sum of matched pair costs and its gradient with respect to the query outputs.

    ``boxes`` is (Q, 4) and ``logits`` is (Q, C_tok). Pass ``assignment`` to
    hold the matching fixed (finite-difference checks); otherwise it is solved.
    """
    boxes = real_array(boxes)
    logits = real_array(logits)
    if assignment is None:
        assignment = hungarian_assign(cost_matrix(boxes, logits, targets, weights))
    tb = targets.box.as_array()
    maps = targets.map_matrix()
    queries = np.array(assignment.query_of_target, dtype=np.int64)

    pb = boxes[queries]
    diff = pb - tb
    g, dg = giou_with_grad(pb, tb)
    logp = log_softmax(logits[queries])
    ce = -(maps * logp).sum(axis=1)
    l1 = np.abs(diff).sum(axis=1)

    # numpy scalars keep extended precision when the inputs carry it
    box_l1 = l1.sum()
    giou_term = (1.0 - g).sum()
    attr = ce.sum()
    total = weights.beta_box * (box_l1 + giou_term) + weights.beta_attr * attr

    grad_boxes = np.zeros_like(boxes)
    grad_logits = np.zeros_like(logits)
    np.add.at(grad_boxes, queries, weights.beta_box * (np.sign(diff) - dg))
    p = np.exp(logp)
    np.add.at(grad_logits, queries, weights.beta_attr * (p * maps.sum(axis=1, keepdims=True) - maps))
    return LossResult(total, assignment, box_l1, giou_term, attr, grad_boxes, grad_logits)


def entropy(probs: Sequence[float]) -> float:
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())
