import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eventground.boxes import BoxXYWH
from eventground.errors import InvalidArgument, InvalidConfiguration, NumericalFailure
from eventground.events import EventWindow, voxelize
from eventground.gradcheck import gradient_check, gradient_check_report
from eventground.matching import PseudoTargetSet
from eventground.model import (FUSION_STRATEGIES, NUM_EXPERTS, JointStates, ModelConfig, SampleInput, decode,
                               encode, flatten, forward, fuse, init_params, mask_states, moee_fuse,
                               param_shapes, unflatten)
from eventground.text import AttributeKind, AttributeMask, SoftTokenMap


def toy_config(strategy="moee", **kw):
    base = dict(channel_width=8, num_queries=4, visual_patch=16, height=32, width=64, bins=3,
                vocab=tuple("abcdefg"), fusion_strategy=strategy)
    base.update(kw)
    return ModelConfig(**base)


def toy_problem(strategy="moee", seed=0):
    cfg = toy_config(strategy)
    rng = np.random.default_rng(seed)
    sample = SampleInput(rng.normal(size=(cfg.num_patches, cfg.visual_dim)), np.array([1, 2, 3, 4, 5, 1]),
                         (rng.random((4, 6)) > 0.4).astype(float))
    maps = []
    for i in range(4):
        bits = (rng.random(6) > 0.5).astype(float)
        bits[i] = 1
        maps.append(SoftTokenMap(bits / bits.sum()))
    targets = PseudoTargetSet(BoxXYWH(0.4, 0.5, 0.3, 0.2), tuple(maps))
    return cfg, init_params(cfg), sample, targets


def empty_grid(cfg):
    z = np.zeros(0, dtype=np.int64)
    return voxelize(EventWindow(z, z, z, z.astype(np.int8), 0, 1000, cfg.width, cfg.height), cfg.bins)


def test_config_validation():
    with pytest.raises(InvalidConfiguration):
        toy_config(channel_width=3)
    with pytest.raises(InvalidConfiguration):
        toy_config(num_queries=0)
    with pytest.raises(InvalidConfiguration):
        toy_config(sigma_init=-0.1)
    with pytest.raises(InvalidConfiguration):
        toy_config(visual_patch=5)
    assert toy_config(modality="event-only").modality == "event"


def test_init_is_seeded_and_bounded():
    cfg = toy_config()
    a, b = init_params(cfg), init_params(cfg)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(toy_config(seed=1))
    assert any(not np.array_equal(a[k], c[k]) for k in a)
    shapes = param_shapes(cfg)
    for k, v in a.items():
        assert v.shape == shapes[k]
        if v.ndim == 2 and k not in ("queries", "tok_emb"):
            assert np.abs(v).max() <= 1 / math.sqrt(v.shape[0])
    assert a["gate_sigma"][0] == pytest.approx(0.1)
    np.testing.assert_array_equal(flatten(unflatten(flatten(a), a)), flatten(a))


def test_encode_examples():
    cfg = toy_config(modality="event")
    params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    states = encode(empty_grid(cfg), None, [1, 2, 3], params, cfg)
    assert states.values.shape == (1, cfg.num_patches + 3, cfg.channel_width)
    assert not states.values.any()
    full = init_params(cfg)
    one = encode(empty_grid(cfg), None, [1, 2, 3], full, cfg).values
    two = encode(empty_grid(cfg), None, [1, 2, 3], full, cfg).values
    assert one.tobytes() == two.tobytes()
    with pytest.raises(InvalidArgument):
        encode(None, np.zeros((cfg.height, cfg.width), np.uint8), [1], full, cfg)
    with pytest.raises(InvalidArgument):
        encode(empty_grid(cfg), None, [99], full, cfg)


def test_encode_shape_arithmetic():
    # 24 visual rows and 8 tokens give 32 rows
    cfg = toy_config(height=32, width=96, visual_patch=8, modality="event")
    assert cfg.num_patches == 48
    cfg = toy_config(height=16, width=96, visual_patch=8, modality="event")
    assert cfg.num_patches == 24
    states = encode(empty_grid(cfg), None, [i % 7 for i in range(8)], init_params(cfg), cfg)
    assert states.length == 32 and states.visual_len == 24


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mask_matches_elementwise_oracle_and_is_nilpotent(seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(1, 7, 5))
    states = JointStates(vals, 3)
    bits = tuple(int(b) for b in (rng.random(7) > 0.5))
    mask = AttributeMask(np.array(bits), AttributeKind.STATUS, 3)
    out = mask_states(states, mask)
    for j in range(7):
        for c in range(5):
            assert out.values[0, j, c] == (vals[0, j, c] if bits[j] else 0.0)
    again = mask_states(out, mask)
    np.testing.assert_array_equal(again.values, out.values)
    np.testing.assert_array_equal(mask_states(states, AttributeMask(np.ones(7), AttributeKind.STATUS, 3)).values, vals)


def test_mask_length_mismatch():
    with pytest.raises(InvalidArgument):
        mask_states(JointStates(np.zeros((1, 4, 2)), 2), AttributeMask(np.ones(3), AttributeKind.STATUS, 2))


def _identical_experts(cfg):
    params = init_params(cfg)
    for i in range(1, NUM_EXPERTS):
        for part in ("u", "r", "d"):
            params[f"exp{i}_{part}"] = params[f"exp0_{part}"].copy()
    return params


def test_symmetric_inputs_give_uniform_gate():
    cfg = toy_config()
    params = _identical_experts(cfg)
    c = cfg.channel_width
    # identical descriptors and a gate projection symmetric across experts
    block = np.random.default_rng(0).normal(size=(c, 1))
    params["gate_w"] = np.kron(np.ones((NUM_EXPERTS, NUM_EXPERTS)), block)
    h = JointStates(np.random.default_rng(1).normal(size=(1, 6, c)), 4)
    fused, gates = moee_fuse([h] * 4, params)
    np.testing.assert_allclose(gates.lam, 0.25, atol=1e-12)


def test_gate_logits_example():
    cfg = toy_config()
    params = init_params(cfg)
    c = cfg.channel_width
    for i in range(NUM_EXPERTS):
        for part in ("u", "r", "d"):
            params[f"exp{i}_{part}"] = np.zeros_like(params[f"exp{i}_{part}"])
    # zero refiners leave the all-ones input intact, so every descriptor entry is 1
    params["gate_w"] = np.zeros((NUM_EXPERTS * c, NUM_EXPERTS))
    params["gate_w"][:, 0] = math.log(2) / (NUM_EXPERTS * c)
    params["gate_sigma"] = np.array([0.0])
    h = JointStates(np.ones((1, 5, c)), 3)
    _, gates = moee_fuse([h] * 4, params, noise_enabled=True, rng=np.random.default_rng(0))
    np.testing.assert_allclose(gates.lam[0], [0.4, 0.2, 0.2, 0.2], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans(), st.sampled_from(["moee", "attention", "add"]))
def test_gate_simplex(seed, noise, strategy):
    cfg = toy_config(strategy)
    rng = np.random.default_rng(seed)
    params = init_params(cfg)
    if "gate_w" in params:
        params["gate_w"] *= 50
        params["gate_sigma"] = np.array([3.0])
    masked = [JointStates(rng.normal(size=(2, 6, 8)) * 3, 4) for _ in range(4)]
    fused, gates = fuse(masked, params, strategy, noise_enabled=noise, rng=rng)
    assert (gates.lam >= 0).all()
    np.testing.assert_allclose(gates.lam.sum(axis=1), 1.0, atol=1e-9)
    assert fused.values.shape == (2, 6, 8)


def test_noise_off_is_pure_and_noise_uses_rng():
    cfg = toy_config()
    params = init_params(cfg)
    rng = np.random.default_rng(3)
    masked = [JointStates(rng.normal(size=(1, 6, 8)), 4) for _ in range(4)]
    a, ga = moee_fuse(masked, params)
    b, gb = moee_fuse(masked, params, rng=np.random.default_rng(99))
    assert a.values.tobytes() == b.values.tobytes() and ga.lam.tobytes() == gb.lam.tobytes()
    n1 = moee_fuse(masked, params, True, np.random.default_rng(5))[1].lam
    n2 = moee_fuse(masked, params, True, np.random.default_rng(5))[1].lam
    np.testing.assert_array_equal(n1, n2)
    assert not np.array_equal(n1, ga.lam)


def test_permutation_symmetry():
    cfg = toy_config()
    params = init_params(cfg)
    c = cfg.channel_width
    rng = np.random.default_rng(4)
    masked = [JointStates(rng.normal(size=(1, 6, c)), 4) for _ in range(4)]
    perm = [2, 0, 3, 1]
    swapped = dict(params)
    for new, old in enumerate(perm):
        for part in ("u", "r", "d"):
            swapped[f"exp{new}_{part}"] = params[f"exp{old}_{part}"]
    rows = np.concatenate([np.arange(old * c, (old + 1) * c) for old in perm])
    swapped["gate_w"] = params["gate_w"][rows][:, perm]
    fused, gates = moee_fuse(masked, params)
    fused_p, gates_p = moee_fuse([masked[i] for i in perm], swapped)
    np.testing.assert_allclose(gates_p.lam[0], gates.lam[0][perm], atol=1e-12)
    np.testing.assert_allclose(fused_p.values, fused.values, atol=1e-12)


def test_fuse_rejects_mismatched_shapes():
    params = init_params(toy_config())
    good = JointStates(np.zeros((1, 6, 8)), 4)
    with pytest.raises(InvalidArgument):
        moee_fuse([good, good, good, JointStates(np.zeros((1, 7, 8)), 4)], params)
    with pytest.raises(InvalidArgument):
        moee_fuse([good] * 3, params)


def test_decode_zero_weights_gives_half_boxes():
    cfg = toy_config()
    params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    out = decode(JointStates(np.zeros((1, cfg.num_patches + 5, 8)), cfg.num_patches), params, cfg)
    assert out.boxes.shape == (4, 4) and out.token_logits.shape == (4, 5)
    np.testing.assert_allclose(out.boxes, 0.5, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 30.0), st.sampled_from(FUSION_STRATEGIES))
def test_box_range(seed, scale, strategy):
    cfg, params, sample, _ = toy_problem(strategy, seed % 7)
    rng = np.random.default_rng(seed)
    params = {k: v * scale + rng.normal(size=v.shape) * (scale if k != "gate_sigma" else 0) for k, v in params.items()}
    if "gate_sigma" in params:
        params["gate_sigma"] = np.abs(params["gate_sigma"])
    out, _ = forward(params, cfg, sample, rng=rng)
    assert np.isfinite(out.boxes).all() and np.isfinite(out.token_logits).all()
    assert (out.boxes >= 0).all() and (out.boxes <= 1).all()


@pytest.mark.parametrize("strategy", FUSION_STRATEGIES)
def test_gradient_check_toy(strategy):
    cfg, params, sample, targets = toy_problem(strategy)
    assert gradient_check(params, cfg, sample, targets, 1e-5) < 1e-4


def test_gradient_check_second_order_scaling():
    # with rounding noise out of the way, central differences err by O(eps^2):
    # ten times the step gives about a hundred times the error
    cfg, params, sample, targets = toy_problem("moee")
    coarse = gradient_check_report(params, cfg, sample, targets, 1e-4, names=["vis_w"], precision="extended")
    fine = gradient_check_report(params, cfg, sample, targets, 1e-5, names=["vis_w"], precision="extended")
    ratio = coarse.max_relative_error / fine.max_relative_error
    assert 50 < ratio < 200, ratio
    assert fine.max_relative_error < 1e-4 and coarse.max_relative_error < 1e-4


def test_gradient_check_errors_within_10x_across_epsilon():
    # holds for the default precision, where the fine step sits at the float64
    # rounding floor; in pure extended precision the ratio is ~100 (test above)
    cfg, params, sample, targets = toy_problem("moee")
    coarse = gradient_check(params, cfg, sample, targets, 1e-4)
    fine = gradient_check(params, cfg, sample, targets, 1e-5)
    assert max(coarse, fine) / min(coarse, fine) <= 10


def test_gradient_check_constant_region():
    cfg, params, sample, targets = toy_problem("none")
    # zero decoder and head weights, detached queries: the loss is flat in every parameter
    params = {k: np.zeros_like(v) for k, v in params.items()}
    report = gradient_check_report(params, cfg, sample, targets, 1e-5, names=["vis_w", "enc0_a", "tok_emb"])
    assert report.max_relative_error == pytest.approx(0.0, abs=1e-6)
    assert report.analytic == 0.0


@pytest.mark.parametrize("precision", ["double", "extended", "auto"])
def test_gradient_check_catches_a_wrong_backward(monkeypatch, precision):
    import eventground.gradcheck as gc
    real = gc.backward

    def skewed(*args):
        g = real(*args)
        g["dec_k"] = g["dec_k"] * 1.001
        return g

    monkeypatch.setattr(gc, "backward", skewed)
    cfg, params, sample, targets = toy_problem("moee")
    rep = gradient_check_report(params, cfg, sample, targets, 1e-5, names=["dec_k"], precision=precision)
    assert rep.max_relative_error > 5e-4 and rep.worst_parameter == "dec_k"


def test_gradient_check_errors():
    cfg, params, sample, targets = toy_problem("moee")
    with pytest.raises(InvalidArgument):
        gradient_check(params, cfg, sample, targets, 1e-2)
    with pytest.raises(InvalidArgument):
        gradient_check_report(params, cfg, sample, targets, 1e-5, precision="quad")
    bad = dict(params, box_b=params["box_b"] * np.nan)
    with pytest.raises(NumericalFailure):
        gradient_check(bad, cfg, sample, targets, 1e-5)
