"""Training configuration, sample preparation, SGD training, evaluation and grounding."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import GroundingSample
from .errors import InvalidConfiguration, NumericalFailure, UndefinedMetric
from .events import ResponseStrength, normalize_strengths, response_strength, strength_bin, voxelize
from .inference import GroundingResult, score_queries, select_box
from .matching import LossWeights, PseudoTargetSet, total_loss
from .metrics import EvalRecord, MetricsReport, report
from .model import (FUSION_STRATEGIES, ModelConfig, SampleInput, backward, canonical_modality, forward,
                    init_params, visual_features)
from .text import (ATTRIBUTES, AttributeKind, PositiveMap, SynonymTable, class_name_maps, expression_maps, soften,
                   tokenize)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    steps: int = 5000
    batch_size: int = 8
    beta_box: float = 2.0
    beta_attr: float = 1.0
    sigma_init: float = 0.1
    num_queries: int = 16
    channel_width: int = 32
    visual_patch: int = 8
    bins: int = 9
    modality: str = "fusion"
    theta: float = 0.5
    data_seed: int = 42
    model_seed: int = 0
    pwm_on: bool = True
    maf_on: bool = True
    moee_on: bool = True
    fusion_strategy: str = "moee"
    attribute_subset: tuple = tuple(k.value for k in ATTRIBUTES)
    log_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "modality", canonical_modality(self.modality))
        subset = self.attribute_subset
        if isinstance(subset, str):
            subset = [s for s in subset.split(",") if s.strip()]
        try:
            subset = tuple(AttributeKind.parse(s).value for s in subset)
        except ValueError as exc:
            raise InvalidConfiguration(f"unknown attribute in attribute_subset: {exc}") from exc
        object.__setattr__(self, "attribute_subset", tuple(k.value for k in ATTRIBUTES if k.value in subset))
        if self.learning_rate <= 0:
            raise InvalidConfiguration("learning_rate must be positive")
        if self.steps < 0:
            raise InvalidConfiguration("steps must be non-negative")
        if self.batch_size < 1:
            raise InvalidConfiguration("batch_size must be >= 1")
        if not self.attribute_subset:
            raise InvalidConfiguration("attribute_subset must not be empty")
        if self.fusion_strategy not in FUSION_STRATEGIES:
            raise InvalidConfiguration(f"fusion_strategy must be one of {FUSION_STRATEGIES}")
        if not 0.0 < self.theta < 1.0:
            raise InvalidConfiguration("theta must lie in (0, 1)")
        if self.num_queries < len(self.attribute_subset):
            raise InvalidConfiguration("num_queries must cover every pseudo-target")

    @property
    def effective_strategy(self) -> str:
        """``moee_on = false`` swaps the gated mixture for the additive baseline."""
        if not self.moee_on and self.fusion_strategy == "moee":
            return "add"
        return self.fusion_strategy

    @property
    def kinds(self) -> tuple:
        return tuple(AttributeKind(v) for v in self.attribute_subset)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.beta_box, self.beta_attr)

    def model_config(self, vocab: Sequence[str], height: int, width: int) -> ModelConfig:
        return ModelConfig(channel_width=self.channel_width, num_queries=self.num_queries,
                           visual_patch=self.visual_patch, sigma_init=self.sigma_init,
                           modality=self.modality, seed=self.model_seed,
                           fusion_strategy=self.effective_strategy, bins=self.bins,
                           height=height, width=width, vocab=tuple(vocab))

    # flat key=value text form
    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, **overrides) -> "TrainConfig":
        kwargs = parse_key_values(text)
        kwargs.update(overrides)
        return cls.from_mapping(kwargs)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise InvalidConfiguration(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, dataclasses.fields(cls))
        return cls(**kwargs)


def _coerce(key, raw, fields):
    default = next(f.default for f in fields if f.name == key)
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise InvalidConfiguration(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfiguration(f"config line {lineno} is not key=value: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path, **overrides) -> TrainConfig:
    return TrainConfig.loads(Path(path).read_text(), **overrides)


# -- preparation -----------------------------------------------------------------

def build_vocab(samples: Sequence[GroundingSample]) -> tuple[str, ...]:
    words = set()
    for s in samples:
        words.update(tokenize(s.expression).tokens)
    return ("<unk>",) + tuple(sorted(words))


@dataclass
class Prepared:
    sample: GroundingSample
    inputs: SampleInput
    targets: PseudoTargetSet
    score_maps: list  # SoftTokenMap per scoring slot
    slot_names: tuple
    strength_raw: int
    warnings: list = field(default_factory=list)


def supervision_maps(sample: GroundingSample, cfg: TrainConfig, synonyms: SynonymTable):
    """Token maps per ablation setting: (ExpressionMaps for masking, soft targets, slot names, warnings)."""
    tokens = tokenize(sample.expression)
    if cfg.pwm_on:
        maps = expression_maps(tokens, sample.spans, synonyms, cfg.kinds)
    else:
        maps = class_name_maps(tokens, sample.class_label, synonyms)
    warnings = []
    kinds = cfg.kinds if cfg.pwm_on else ATTRIBUTES
    positives = [maps.positives[k.index - 1] for k in kinds]
    if all(p.empty for p in positives):
        warnings.append("no attribute cue matched; scoring falls back to the public context")
    if cfg.maf_on:
        fallback = soften(maps.public)
        soft = [soften(p) for p in positives]
        soft = [fallback if s.empty else s for s in soft]
        names = tuple(k.value for k in kinds)
    else:
        union = np.zeros(len(tokens), dtype=np.uint8)
        for p in positives:
            union |= p.bits
        s = soften(PositiveMap(union, "union"))
        soft = [soften(maps.public) if s.empty else s]
        names = ("union",)
    return maps, soft, names, warnings


def prepare(samples: Sequence[GroundingSample], model_cfg: ModelConfig, cfg: TrainConfig,
            synonyms: Optional[SynonymTable] = None) -> list[Prepared]:
    synonyms = synonyms or SynonymTable.default()
    grids: dict = {}
    out = []
    for s in samples:
        key = id(s.window)
        if key not in grids:
            grid = voxelize(s.window, model_cfg.bins)
            feats = visual_features(grid if model_cfg.uses_events else None,
                                    s.frame if model_cfg.uses_frame else None, model_cfg)
            grids[key] = (feats, response_strength(grid).raw)
        feats, strength = grids[key]
        maps, soft, names, warnings = supervision_maps(s, cfg, synonyms)
        tokens = maps.tokens
        text_masks = np.stack([m.bits[m.visual_len:] for m in maps.masks(0)]).astype(np.float64)
        inputs = SampleInput(feats, model_cfg.token_ids(tokens.tokens), text_masks)
        targets = PseudoTargetSet(s.gt_box, tuple(soft))
        out.append(Prepared(s, inputs, targets, soft, names, strength, warnings))
    return out


# -- training --------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    config: TrainConfig
    log: list


def _check_finite(value, step, what):
    if not np.isfinite(value):
        raise NumericalFailure(f"non-finite {what} at step {step}: {value}")


def train(cfg: TrainConfig, samples: Sequence[GroundingSample], synonyms: Optional[SynonymTable] = None,
          progress: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Plain SGD on the matched pseudo-target loss. Deterministic given the seeds."""
    train_samples = [s for s in samples if s.split == "train"] or list(samples)
    if not train_samples:
        raise InvalidConfiguration("training needs at least one sample")
    first = train_samples[0].window
    model_cfg = cfg.model_config(build_vocab(samples), first.height, first.width)
    prepared = prepare(train_samples, model_cfg, cfg, synonyms)
    params = init_params(model_cfg)
    batch_rng = np.random.default_rng([cfg.model_seed, 0])
    noise_rng = np.random.default_rng([cfg.model_seed, 1])
    weights = cfg.weights
    log = []
    order = np.array([], dtype=np.int64)
    for step in range(cfg.steps):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, batch_rng.permutation(len(prepared))])
        batch, order = order[:cfg.batch_size], order[cfg.batch_size:]
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        sums = np.zeros(4)
        lam_sum = np.zeros(4)
        for j in batch:
            item = prepared[j]
            out, cache = forward(params, model_cfg, item.inputs, rng=noise_rng, keep_cache=True)
            if not (np.isfinite(out.boxes).all() and np.isfinite(out.token_logits).all()):
                raise NumericalFailure(f"non-finite model outputs at step {step} on sample {item.sample.sample_id}")
            res = total_loss(out.boxes, out.token_logits, item.targets, weights)
            _check_finite(res.total, step, "loss")
            g = backward(params, model_cfg, cache, res.grad_boxes, res.grad_logits)
            for k in grads:
                grads[k] += g[k]
            sums += (res.total, res.box_l1, res.giou_term, res.attr)
            lam_sum += out.lam
        scale = cfg.learning_rate / len(batch)
        for k in params:
            params[k] -= scale * grads[k]
        if "gate_sigma" in params:
            np.maximum(params["gate_sigma"], 0.0, out=params["gate_sigma"])
        sums /= len(batch)
        lam_sum /= len(batch)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            line = (f"step={step} total={sums[0]:.6f} box_l1={sums[1]:.6f} giou={sums[2]:.6f} "
                    f"attr={sums[3]:.6f} lambda={','.join(f'{v:.4f}' for v in lam_sum)}")
            log.append(line)
            if progress is not None:
                progress(line)
    return TrainResult(params, model_cfg, cfg, log)


# -- evaluation ------------------------------------------------------------------

def ground_prepared(params, model_cfg: ModelConfig, item: Prepared) -> GroundingResult:
    out, _ = forward(params, model_cfg, item.inputs)
    table = score_queries(out, item.score_maps, item.slot_names)
    result = select_box(table, out)
    result.warnings.extend(item.warnings)
    return result


def evaluate(params, model_cfg: ModelConfig, cfg: TrainConfig, samples: Sequence[GroundingSample],
             theta: Optional[float] = None, synonyms: Optional[SynonymTable] = None) -> MetricsReport:
    """Noise-free inference over ``samples`` and the full metric report."""
    if not samples:
        raise UndefinedMetric("no samples to evaluate")
    for s in samples:
        if (s.window.height, s.window.width) != (model_cfg.height, model_cfg.width):
            raise InvalidConfiguration("dataset geometry differs from the checkpoint")
    prepared = prepare(samples, model_cfg, cfg, synonyms)
    strengths = normalize_strengths([ResponseStrength(p.strength_raw) for p in prepared])
    records = []
    for item, st in zip(prepared, strengths):
        res = ground_prepared(params, model_cfg, item)
        s = item.sample
        records.append(EvalRecord(res.box, s.gt_box, s.class_label, len(s.objects),
                                  strength_bin(st.normalized), res.gate_weights, res.attribute))
    return report(records, cfg.theta if theta is None else theta)

