"""A small differentiable grounding network with hand-derived gradients.

Pipeline per sample::

    patch features + token embeddings -> 2 residual context blocks -> H
    H -> four attribute masks -> four expert refiners -> gated fusion -> F
    F -> pooled-text query attends over visual rows -> box as the attended mix of
         per-patch box proposals; Q learned queries -> token head

Everything is float64 numpy; ``backward`` returns exact gradients of any
scalar loss given its gradients with respect to the boxes and token logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidConfiguration
from .events import VoxelGrid
from .text import ATTRIBUTES, AttributeMask

MODALITIES = ("event", "frame", "fusion")
FUSION_STRATEGIES = ("none", "add", "concat", "attention", "moee")
BOX_FLOOR = 1e-4
# event features are divided by this to sit near the frame features' range
EVENT_FEATURE_SCALE = 16.0
# queries attend with the shared text query; per-query keys are off
QUERY_ATTENTION = False
# attention logits are soft-clipped to +-ATTN_BOUND after scaling by ATTN_SCALE
ATTN_BOUND = 12.0
ATTN_SCALE = 1.0 / np.sqrt(32.0)
# a patch proposal may move its center this fraction of the room to the border
OFFSET_RANGE = 0.15
NUM_EXPERTS = len(ATTRIBUTES)

# each patch sees itself and the patches one and two steps away along rows and columns
NEIGHBOR_SHIFTS = ((0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (0, -2), (0, 2), (-2, 0), (2, 0))

_MODALITY_ALIASES = {"event-only": "event", "events": "event", "frame-only": "frame", "frames": "frame"}


def canonical_modality(name: str) -> str:
    m = _MODALITY_ALIASES.get(name, name)
    if m not in MODALITIES:
        raise InvalidConfiguration(f"unknown modality {name!r}; expected one of {MODALITIES}")
    return m


@dataclass(frozen=True)
class ModelConfig:
    channel_width: int = 32
    num_queries: int = 16
    visual_patch: int = 8
    sigma_init: float = 0.1
    modality: str = "fusion"
    seed: int = 0
    fusion_strategy: str = "moee"
    bins: int = 9
    height: int = 64
    width: int = 128
    vocab: tuple[str, ...] = ("<unk>",)

    def __post_init__(self):
        object.__setattr__(self, "modality", canonical_modality(self.modality))
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.channel_width < 4:
            raise InvalidConfiguration("channel_width must be >= 4")
        if self.num_queries < 1:
            raise InvalidConfiguration("num_queries must be >= 1")
        if self.sigma_init < 0:
            raise InvalidConfiguration("sigma_init must be >= 0")
        if self.fusion_strategy not in FUSION_STRATEGIES:
            raise InvalidConfiguration(f"unknown fusion strategy {self.fusion_strategy!r}")
        if self.visual_patch < 1 or self.height % self.visual_patch or self.width % self.visual_patch:
            raise InvalidConfiguration("visual_patch must divide the sensor height and width")
        if self.bins < 1:
            raise InvalidConfiguration("bins must be >= 1")

    @property
    def uses_events(self) -> bool:
        return self.modality in ("event", "fusion")

    @property
    def uses_frame(self) -> bool:
        return self.modality in ("frame", "fusion")

    @property
    def num_patches(self) -> int:
        return (self.height // self.visual_patch) * (self.width // self.visual_patch)

    @property
    def visual_dim(self) -> int:
        per_patch = (2 * self.bins + 10) * self.uses_events + 2 * self.uses_frame
        return per_patch * len(NEIGHBOR_SHIFTS) + 2

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        index = {w: i for i, w in enumerate(self.vocab)}
        return np.array([index.get(t, 0) for t in tokens], dtype=np.int64)


# -- inputs ---------------------------------------------------------------------

def patch_coordinates(config: ModelConfig) -> np.ndarray:
    """Patch centers mapped to [-1, 1], row-major over the patch grid."""
    ps = config.visual_patch
    hp, wp = config.height // ps, config.width // ps
    cy = (np.arange(hp) + 0.5) / hp
    cx = (np.arange(wp) + 0.5) / wp
    gx, gy = np.meshgrid(cx, cy)
    return np.stack([gx.ravel(), gy.ravel()], axis=1) * 2.0 - 1.0


def _with_neighbors(feats: np.ndarray, hp: int, wp: int) -> np.ndarray:
    """(P, D) patch features -> (P, len(NEIGHBOR_SHIFTS) * D), zero outside the image."""
    d = feats.shape[1]
    r = max(max(abs(a), abs(b)) for a, b in NEIGHBOR_SHIFTS)
    padded = np.zeros((hp + 2 * r, wp + 2 * r, d))
    padded[r:r + hp, r:r + wp] = feats.reshape(hp, wp, d)
    parts = [padded[r + dr:r + dr + hp, r + dc:r + dc + wp].reshape(hp * wp, d) for dr, dc in NEIGHBOR_SHIFTS]
    return np.concatenate(parts, axis=1)


def _event_features(data: np.ndarray, bins: int, hp: int, wp: int, ps: int) -> np.ndarray:
    """Per patch: log counts per (polarity, bin) and signed space-time moments per polarity.

    The moments weight each voxel by its in-patch offset (x, y) and bin offset t,
    all scaled to [-1, 1]; the sign of the x*t and y*t moments follows the motion.
    """
    vox = data.reshape(2, bins, hp, ps, wp, ps).astype(np.float64)
    counts = vox.sum(axis=(3, 5)).reshape(2 * bins, hp * wp).T
    off = (np.arange(ps) + 0.5) / ps * 2.0 - 1.0
    tau = np.linspace(-1.0, 1.0, bins) if bins > 1 else np.zeros(1)
    per_t = vox.sum(axis=(3, 5))                     # (2, T, hp, wp)
    per_tx = np.einsum("ptiyjx,x->ptij", vox, off)
    per_ty = np.einsum("ptiyjx,y->ptij", vox, off)
    moments = np.stack([
        np.einsum("ptij,t->pij", per_t, tau),
        per_tx.sum(axis=1),
        per_ty.sum(axis=1),
        np.einsum("ptij,t->pij", per_tx, tau),
        np.einsum("ptij,t->pij", per_ty, tau),
    ], axis=1).reshape(10, hp * wp).T
    # log/asinh compression brings values to about [0, 5]; rescale toward the frame's range
    return np.concatenate([np.log1p(counts), np.arcsinh(moments)], axis=1) / EVENT_FEATURE_SCALE


def visual_features(grid: Optional[VoxelGrid], frame: Optional[np.ndarray], config: ModelConfig) -> np.ndarray:
    """Patch-pooled inputs.

    Per patch: log event counts per (polarity, bin) and frame mean/std, each
    repeated for the neighbouring patches, then the patch center coordinates.
    """
    ps = config.visual_patch
    hp, wp = config.height // ps, config.width // ps
    parts = []
    if config.uses_events:
        if grid is None:
            raise InvalidArgument(f"modality {config.modality!r} needs an event grid")
        if grid.data.shape != (2, config.bins, config.height, config.width):
            raise InvalidArgument(f"grid shape {grid.data.shape} does not match the model geometry")
        parts.append(_event_features(grid.data, config.bins, hp, wp, ps))
    elif grid is not None:
        raise InvalidArgument("frame-only model was given an event grid")
    if config.uses_frame:
        if frame is None:
            raise InvalidArgument(f"modality {config.modality!r} needs an intensity frame")
        if frame.shape != (config.height, config.width):
            raise InvalidArgument(f"frame shape {frame.shape} does not match the model geometry")
        img = (frame.astype(np.float64) - 128.0) / 128.0
        blocks = img.reshape(hp, ps, wp, ps).transpose(0, 2, 1, 3).reshape(hp * wp, ps * ps)
        parts.append(np.stack([blocks.mean(axis=1), blocks.std(axis=1)], axis=1))
    elif frame is not None:
        raise InvalidArgument("event-only model was given a frame")
    local = _with_neighbors(np.concatenate(parts, axis=1), hp, wp)
    return np.concatenate([local, patch_coordinates(config)], axis=1)


@dataclass
class SampleInput:
    """Precomputed model inputs for one expression over one scene."""

    visual: np.ndarray  # (P, visual_dim)
    token_ids: np.ndarray  # (C_tok,)
    text_masks: np.ndarray  # (4, C_tok) attribute masks over text positions

    @property
    def visual_len(self) -> int:
        return self.visual.shape[0]

    @property
    def num_tokens(self) -> int:
        return len(self.token_ids)


# -- parameters -----------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    c, q = config.channel_width, config.num_queries
    shapes: dict[str, tuple[int, ...]] = {
        "vis_w": (config.visual_dim, c),
        "vis_b": (c,),
        "tok_emb": (len(config.vocab), c),
    }
    for b in range(2):
        shapes[f"enc{b}_a"] = (c, c)
        shapes[f"enc{b}_g"] = (c, c)
        shapes[f"enc{b}_c"] = (c,)
    if config.fusion_strategy != "none":
        for i in range(NUM_EXPERTS):
            shapes[f"exp{i}_u"] = (c, c)
            shapes[f"exp{i}_r"] = (c, c)
            shapes[f"exp{i}_d"] = (c,)
    if config.fusion_strategy == "moee":
        shapes["gate_w"] = (NUM_EXPERTS * c, NUM_EXPERTS)
        shapes["gate_sigma"] = (1,)
    elif config.fusion_strategy == "attention":
        shapes["att_a"] = (c,)
    elif config.fusion_strategy == "concat":
        shapes["cat_w"] = (NUM_EXPERTS * c, c)
    shapes.update({
        "queries": (q, c),
        "dec_qt": (c, c),
        "dec_k": (c, c),
        "dec_v": (c, c),
        "box_w": (c, 4),
        "box_b": (4,),
        "tok_w": (c, c),
    })
    return shapes


_BIAS_OF = {"vis_b": "vis_w", "box_b": "box_w"}


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from ``config.seed``; gate scale starts at sigma_init."""
    rng = np.random.default_rng(config.seed)
    shapes = param_shapes(config)
    params = {}
    for name, shape in shapes.items():
        if name == "gate_sigma":
            params[name] = np.array([config.sigma_init], dtype=np.float64)
            continue
        if name in _BIAS_OF:
            fan_in = shapes[_BIAS_OF[name]][0]
        else:
            # embeddings and queries are rows of width C, scaled like a C-input layer
            fan_in = shape[0] if len(shape) == 2 and name not in ("tok_emb", "queries") else config.channel_width
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def flatten(params: dict[str, np.ndarray], names: Optional[Sequence[str]] = None) -> np.ndarray:
    names = list(params) if names is None else names
    return np.concatenate([params[n].ravel() for n in names])


def unflatten(vector: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, arr in like.items():
        out[name] = vector[pos:pos + arr.size].reshape(arr.shape).copy()
        pos += arr.size
    return out


# -- public building blocks ------------------------------------------------------

@dataclass
class JointStates:
    values: np.ndarray  # (B, L, C)
    visual_len: int

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class GateWeights:
    lam: np.ndarray  # (B, 4)
    sigma: float
    noise_enabled: bool


@dataclass
class QueryOutput:
    boxes: np.ndarray  # (Q, 4) cx, cy, w, h
    token_logits: np.ndarray  # (Q, C_tok)
    lam: np.ndarray = field(default_factory=lambda: np.full(NUM_EXPERTS, 1.0 / NUM_EXPERTS))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax_rows(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _encode2d(params, visual, token_ids, cache=None):
    p_len = visual.shape[0]
    x = np.concatenate([visual @ params["vis_w"] + params["vis_b"], params["tok_emb"][token_ids]])
    for b in range(2):
        ctx = x[p_len:].mean(axis=0)
        act = np.tanh(x @ params[f"enc{b}_a"] + (ctx @ params[f"enc{b}_g"] + params[f"enc{b}_c"]))
        if cache is not None:
            cache[f"enc{b}"] = (x, ctx, act)
        x = x + act
    return x


def encode(grid: Optional[VoxelGrid], frame: Optional[np.ndarray], token_ids, params, config: ModelConfig) -> JointStates:
    """Joint visual+text hidden states, shape (1, P + C_tok, C)."""
    visual = visual_features(grid, frame, config)
    ids = np.asarray(token_ids, dtype=np.int64)
    vocab_rows = params["tok_emb"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_rows):
        raise InvalidArgument(f"token ids must lie in [0, {vocab_rows})")
    h = _encode2d(params, visual, ids)
    return JointStates(h[None], visual.shape[0])


def mask_states(states: JointStates, mask: AttributeMask) -> JointStates:
    bits = np.asarray(mask.bits, dtype=np.float64)
    if len(bits) != states.length:
        raise InvalidArgument(f"mask length {len(bits)} does not match sequence length {states.length}")
    return JointStates(states.values * bits[None, :, None], states.visual_len)


def _experts2d(params, hatt_list, p_len, cache=None):
    out = []
    for i, hatt in enumerate(hatt_list):
        ctx = hatt[p_len:].mean(axis=0)
        act = np.tanh(hatt @ params[f"exp{i}_u"] + (ctx @ params[f"exp{i}_r"] + params[f"exp{i}_d"]))
        if cache is not None:
            cache[f"exp{i}"] = (hatt, ctx, act)
        out.append(hatt + act)
    return out


def _gate2d(params, strategy, experts, eps):
    """Mixing weights (4,), gate pre-activations, descriptors."""
    hbar = np.stack([e.mean(axis=0) for e in experts])
    if strategy == "moee":
        logits = hbar.ravel() @ params["gate_w"]
        sigma = max(float(params["gate_sigma"][0]), 0.0)
        if eps is not None:
            logits = logits + sigma * eps
        return _softmax_rows(logits), hbar
    if strategy == "attention":
        return _softmax_rows(hbar @ params["att_a"]), hbar
    return np.full(NUM_EXPERTS, 1.0 / NUM_EXPERTS), hbar


def fuse(masked: Sequence[JointStates], params, strategy: str = "moee", noise_enabled: bool = False,
         rng: Optional[np.random.Generator] = None) -> tuple[JointStates, GateWeights]:
    if len(masked) != NUM_EXPERTS:
        raise InvalidArgument(f"expected {NUM_EXPERTS} masked state tensors")
    shapes = {m.values.shape for m in masked}
    if len(shapes) != 1:
        raise InvalidArgument(f"masked states differ in shape: {sorted(shapes)}")
    if strategy not in FUSION_STRATEGIES or strategy == "none":
        raise InvalidArgument(f"fuse needs an expert strategy, got {strategy!r}")
    p_len = masked[0].visual_len
    fused, lams = [], []
    for b in range(masked[0].values.shape[0]):
        experts = _experts2d(params, [m.values[b] for m in masked], p_len)
        eps = None
        if noise_enabled and strategy == "moee":
            eps = (rng if rng is not None else np.random.default_rng()).standard_normal(NUM_EXPERTS)
        lam, _ = _gate2d(params, strategy, experts, eps)
        if strategy == "concat":
            fused.append(np.concatenate(experts, axis=1) @ params["cat_w"])
        else:
            fused.append(sum(l * e for l, e in zip(lam, experts)))
        lams.append(lam)
    sigma = float(params["gate_sigma"][0]) if "gate_sigma" in params else 0.0
    return JointStates(np.stack(fused), p_len), GateWeights(np.stack(lams), sigma, noise_enabled)


def moee_fuse(masked: Sequence[JointStates], params, noise_enabled: bool = False,
              rng: Optional[np.random.Generator] = None) -> tuple[JointStates, GateWeights]:
    """Refine each attribute branch, gate with a (noisy) softmax and take the weighted sum."""
    return fuse(masked, params, "moee", noise_enabled, rng)


def _patch_boxes(params, vis, centers):
    """Every visual row proposes a box: its patch center moved by a bounded offset, sigmoid sizes."""
    pre = vis @ params["box_w"] + params["box_b"]
    shift = OFFSET_RANGE * np.tanh(pre[:, :2])
    room = np.where(shift > 0, 1.0 - centers, centers)
    boxes = np.concatenate([centers + shift * room, _sigmoid(pre[:, 2:])], axis=1)
    return boxes, shift, room


def _decode2d(params, fused, p_len, centers, cache=None):
    """Queries attend over the visual rows; a query's box is the attended mix of patch proposals."""
    c = fused.shape[1]
    vis, text = fused[:p_len], fused[p_len:]
    tbar = text.mean(axis=0)
    qa = tbar @ params["dec_qt"]
    qe = params["queries"] + qa
    qk = qe if QUERY_ATTENTION else np.broadcast_to(qa, qe.shape)
    k = vis @ params["dec_k"]
    v = vis @ params["dec_v"]
    bounded = ATTN_BOUND * np.tanh(qk @ k.T * (ATTN_SCALE / ATTN_BOUND))
    attn = _softmax_rows(bounded)
    z = qe + attn @ v
    proposals, shift, room = _patch_boxes(params, vis, centers)
    raw = attn @ proposals
    boxes = raw.copy()
    np.maximum(boxes[:, 2:], BOX_FLOOR, out=boxes[:, 2:])
    y = z @ params["tok_w"]
    logits = y @ text.T / np.sqrt(c)
    if cache is not None:
        cache["dec"] = (fused, tbar, qk, k, v, attn, bounded, z, proposals, shift, room, raw, y)
    return boxes, logits


def patch_centers(config: ModelConfig) -> np.ndarray:
    """Patch centers as (x, y) fractions of the image, strictly inside (0, 1)."""
    return (patch_coordinates(config) + 1.0) / 2.0


def decode(fused: JointStates, params, config: ModelConfig) -> QueryOutput:
    """Query boxes and token logits for the first batch element."""
    boxes, logits = _decode2d(params, fused.values[0], fused.visual_len, patch_centers(config))
    return QueryOutput(boxes, logits)


# -- full forward / backward ----------------------------------------------------

def forward(params, config: ModelConfig, sample: SampleInput, rng: Optional[np.random.Generator] = None,
            keep_cache: bool = False):
    """Run the network on one sample. Gate noise is drawn from ``rng`` when given.

    Returns ``(QueryOutput, cache)``; the cache is ``None`` unless requested.
    """
    cache = {} if keep_cache else None
    p_len = sample.visual_len
    h = _encode2d(params, sample.visual, sample.token_ids, cache)
    strategy = config.fusion_strategy
    lam = np.full(NUM_EXPERTS, 1.0 / NUM_EXPERTS)
    if strategy == "none":
        fused = h
    else:
        masks = [np.concatenate([np.ones(p_len), m]) for m in sample.text_masks]
        experts = _experts2d(params, [h * m[:, None] for m in masks], p_len, cache)
        eps = rng.standard_normal(NUM_EXPERTS) if (rng is not None and strategy == "moee") else None
        lam, hbar = _gate2d(params, strategy, experts, eps)
        if strategy == "concat":
            cat = np.concatenate(experts, axis=1)
            fused = cat @ params["cat_w"]
        else:
            cat = None
            fused = lam[0] * experts[0]
            for i in range(1, NUM_EXPERTS):
                fused = fused + lam[i] * experts[i]
        if cache is not None:
            cache["fuse"] = (masks, experts, lam, hbar, eps, cat)
    boxes, logits = _decode2d(params, fused, p_len, patch_centers(config), cache)
    if cache is not None:
        cache["p_len"] = p_len
        cache["token_ids"] = sample.token_ids
        cache["visual"] = sample.visual
    return QueryOutput(boxes, logits, lam), cache


def backward(params, config: ModelConfig, cache, d_boxes: np.ndarray, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to every parameter."""
    g = {name: np.zeros_like(arr) for name, arr in params.items()}
    p_len = cache["p_len"]
    c = config.channel_width

    # decoder
    fused, tbar, qk, k, v, attn, bounded, z, proposals, shift, room, raw, y = cache["dec"]
    vis, text = fused[:p_len], fused[p_len:]
    d_raw = d_boxes.copy()
    d_raw[:, 2:] *= raw[:, 2:] > BOX_FLOOR
    d_prop = attn.T @ d_raw
    d_pre = np.empty_like(d_prop)
    d_pre[:, :2] = d_prop[:, :2] * room * (OFFSET_RANGE - shift ** 2 / OFFSET_RANGE)
    d_pre[:, 2:] = d_prop[:, 2:] * proposals[:, 2:] * (1.0 - proposals[:, 2:])
    g["box_w"] += vis.T @ d_pre
    g["box_b"] += d_pre.sum(axis=0)
    d_y = d_logits @ text / np.sqrt(c)
    d_text = d_logits.T @ y / np.sqrt(c)
    g["tok_w"] += z.T @ d_y
    d_z = d_y @ params["tok_w"].T
    d_attn = d_z @ v.T + d_raw @ proposals.T
    d_v = attn.T @ d_z
    d_s = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
    d_s *= (1.0 - (bounded / ATTN_BOUND) ** 2) * ATTN_SCALE
    d_qk = d_s @ k
    g["queries"] += d_z + (d_qk if QUERY_ATTENTION else 0.0)
    d_qsum = d_z.sum(axis=0) + d_qk.sum(axis=0)
    g["dec_qt"] += np.outer(tbar, d_qsum)
    d_k = d_s.T @ qk
    g["dec_k"] += vis.T @ d_k
    g["dec_v"] += vis.T @ d_v
    d_f = np.empty_like(fused)
    d_f[:p_len] = d_k @ params["dec_k"].T + d_v @ params["dec_v"].T + d_pre @ params["box_w"].T
    d_f[p_len:] = d_text + (params["dec_qt"] @ d_qsum) / (fused.shape[0] - p_len)

    # fusion and experts
    strategy = config.fusion_strategy
    if strategy == "none":
        d_h = d_f
    else:
        masks, experts, lam, hbar, eps, cat = cache["fuse"]
        if strategy == "concat":
            g["cat_w"] += cat.T @ d_f
            d_cat = d_f @ params["cat_w"].T
            d_e = [d_cat[:, i * c:(i + 1) * c] for i in range(NUM_EXPERTS)]
        else:
            d_e = [lam[i] * d_f for i in range(NUM_EXPERTS)]
            if strategy in ("moee", "attention"):
                d_lam = np.array([(d_f * e).sum() for e in experts])
                d_gl = lam * (d_lam - (lam * d_lam).sum())
                if strategy == "moee":
                    g["gate_w"] += np.outer(hbar.ravel(), d_gl)
                    d_hbar = (params["gate_w"] @ d_gl).reshape(NUM_EXPERTS, c)
                    if eps is not None and params["gate_sigma"][0] > 0:
                        g["gate_sigma"] += (d_gl * eps).sum()
                else:
                    g["att_a"] += hbar.T @ d_gl
                    d_hbar = np.outer(d_gl, params["att_a"])
                n_rows = experts[0].shape[0]
                d_e = [d_e[i] + d_hbar[i] / n_rows for i in range(NUM_EXPERTS)]
        d_h = np.zeros_like(fused)
        for i in range(NUM_EXPERTS):
            hatt, ctx, act = cache[f"exp{i}"]
            d_pre = d_e[i] * (1.0 - act**2)
            s = d_pre.sum(axis=0)
            g[f"exp{i}_u"] += hatt.T @ d_pre
            g[f"exp{i}_r"] += np.outer(ctx, s)
            g[f"exp{i}_d"] += s
            d_hatt = d_e[i] + d_pre @ params[f"exp{i}_u"].T
            d_hatt[p_len:] += (params[f"exp{i}_r"] @ s) / (hatt.shape[0] - p_len)
            d_h += d_hatt * masks[i][:, None]

    # encoder blocks
    d_x = d_h
    for b in (1, 0):
        x, ctx, act = cache[f"enc{b}"]
        d_pre = d_x * (1.0 - act**2)
        s = d_pre.sum(axis=0)
        g[f"enc{b}_a"] += x.T @ d_pre
        g[f"enc{b}_g"] += np.outer(ctx, s)
        g[f"enc{b}_c"] += s
        d_prev = d_x + d_pre @ params[f"enc{b}_a"].T
        d_prev[p_len:] += (params[f"enc{b}_g"] @ s) / (x.shape[0] - p_len)
        d_x = d_prev

    visual = cache["visual"]
    g["vis_w"] += visual.T @ d_x[:p_len]
    g["vis_b"] += d_x[:p_len].sum(axis=0)
    np.add.at(g["tok_emb"], cache["token_ids"], d_x[p_len:])
    return g


def with_strategy(config: ModelConfig, strategy: str) -> ModelConfig:
    return replace(config, fusion_strategy=strategy)
