"""Finite-difference verification of the hand-written backward pass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .matching import LossWeights, PseudoTargetSet, total_loss
from .model import ModelConfig, SampleInput, backward, forward


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst_parameter: str
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    refined: int = 0  # elements re-evaluated in extended precision


def relative_error(analytic, numeric):
    """|g_a - g_n| / max(|g_a|, |g_n|, 1e-8), elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


PRECISIONS = ("double", "extended", "auto")
# in "auto" mode, elements whose double-precision error exceeds this are re-run in extended precision
REFINE_ABOVE = 1e-6


def gradient_check_report(params, config: ModelConfig, sample: SampleInput, targets: PseudoTargetSet,
                          epsilon: float = 1e-5, weights: LossWeights = LossWeights(),
                          names: Optional[Sequence[str]] = None, precision: str = "auto") -> GradCheckResult:
    """Compare the analytic gradient of the total loss with central differences.

    Runs without gate noise. The query-to-target assignment is solved once at
    ``params`` and held fixed for the perturbed evaluations, since the matching
    is piecewise constant and carries no gradient.

    In double precision the difference quotient carries roughly
    1e-16 * |loss| / epsilon of rounding noise, which swamps the relative error
    of gradients near 1e-7. ``precision="extended"`` evaluates the perturbed
    losses in ``np.longdouble`` (no BLAS, so slow); ``"auto"`` runs double
    precision everywhere and repeats in extended precision only the elements
    whose error exceeds ``REFINE_ABOVE``. A wrong analytic gradient fails in
    either precision. The analytic side is always double precision.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise InvalidArgument(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    if precision not in PRECISIONS:
        raise InvalidArgument(f"precision must be one of {PRECISIONS}")
    out, cache = forward(params, config, sample, keep_cache=True)
    if not (np.isfinite(out.boxes).all() and np.isfinite(out.token_logits).all()):
        raise NumericalFailure("non-finite model outputs, the loss is undefined")
    base = total_loss(out.boxes, out.token_logits, targets, weights)
    if not np.isfinite(base.total):
        raise NumericalFailure(f"non-finite loss {base.total}")
    grads = backward(params, config, cache, base.grad_boxes, base.grad_logits)

    def numeric_gradient(dtype, work, inputs, name, idx):
        arr = work[name]
        keep = arr[idx]
        losses = []
        for step in (epsilon, -epsilon):
            arr[idx] = keep + step
            o, _ = forward(work, config, inputs)
            losses.append(total_loss(o.boxes, o.token_logits, targets, weights, assignment=base.assignment).total)
        arr[idx] = keep
        return float((losses[0] - losses[1]) / (2 * dtype(epsilon)))

    def setup(dtype):
        work = {k: v.astype(dtype) for k, v in params.items()}
        return work, dataclasses.replace(sample, visual=np.asarray(sample.visual).astype(dtype))

    first = np.longdouble if precision == "extended" else np.float64
    work, inputs = setup(first)
    refine = None
    worst = GradCheckResult(0.0, "", (), 0.0, 0.0, 0)
    for name in (names or list(params)):
        for idx in np.ndindex(params[name].shape):
            analytic = float(grads[name][idx])
            numeric = numeric_gradient(first, work, inputs, name, idx)
            err = float(relative_error(analytic, numeric))
            if precision == "auto" and err > REFINE_ABOVE:
                if refine is None:
                    refine = setup(np.longdouble)
                numeric = numeric_gradient(np.longdouble, *refine, name, idx)
                err = float(relative_error(analytic, numeric))
                worst.refined += 1
            worst.checked += 1
            if err > worst.max_relative_error or not worst.worst_parameter:
                worst.max_relative_error, worst.worst_parameter, worst.worst_index = err, name, idx
                worst.analytic, worst.numeric = analytic, numeric
    return worst


def gradient_check(params, config: ModelConfig, sample: SampleInput, targets: PseudoTargetSet,
                   epsilon: float = 1e-5, weights: LossWeights = LossWeights()) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return gradient_check_report(params, config, sample, targets, epsilon, weights).max_relative_error
