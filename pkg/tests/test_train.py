import dataclasses

import numpy as np
import pytest

from eventground.checkpoint import Checkpoint, encode_checkpoint
from eventground.errors import InvalidConfiguration, NumericalFailure, UndefinedMetric
from eventground.metrics import EvalRecord, report
from eventground.model import NUM_EXPERTS, JointStates, _experts2d, fuse, init_params
from eventground.synth import GridConfig, gen_corpus
from eventground.train import TrainConfig, evaluate, prepare, train

SMALL = GridConfig(width=64, height=32)


@pytest.fixture(scope="module")
def corpus():
    samples, _ = gen_corpus(9, 12, (1, 3), grid=SMALL)
    return samples


def small_cfg(**kw):
    base = dict(steps=20, channel_width=8, num_queries=4, bins=3, log_every=1)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_steps_returns_initialization(corpus):
    res = train(small_cfg(steps=0), corpus)
    init = init_params(res.model_config)
    assert all(res.params[k].tobytes() == init[k].tobytes() for k in init)
    assert res.log == []


def test_training_is_deterministic(corpus):
    a = train(small_cfg(), corpus)
    b = train(small_cfg(), corpus)
    assert a.log == b.log and len(a.log) == 20
    ca = encode_checkpoint(Checkpoint(a.params, a.model_config, a.config.dumps()))
    cb = encode_checkpoint(Checkpoint(b.params, b.model_config, b.config.dumps()))
    assert ca == cb
    c = train(small_cfg(model_seed=1), corpus)
    assert c.log != a.log


def _loss(line):
    return float(dict(kv.split("=") for kv in line.split())["total"])


def _window_mean(log, start, width=25):
    return np.mean([_loss(line) for line in log[start:start + width]])


@pytest.mark.slow
def test_loss_decreases_over_500_steps():
    samples, _ = gen_corpus(42, 50, (3, 3))
    drops = []
    for seed in range(3):
        res = train(TrainConfig(steps=500, model_seed=seed), samples)
        # mean over the first and last 25 logged steps, since single batches are noisy
        drops.append(_window_mean(res.log, 0) - _window_mean(res.log, 475))
    assert np.median(drops) > 0


def test_ablation_toggles_rewire_supervision(corpus):
    cfg = small_cfg()
    model_cfg = cfg.model_config(("a",), SMALL.height, SMALL.width)
    full = prepare(corpus[:3], model_cfg, cfg)
    union = prepare(corpus[:3], model_cfg, small_cfg(maf_on=False))
    classes = prepare(corpus[:3], model_cfg, small_cfg(pwm_on=False))
    for f, u, c in zip(full, union, classes):
        assert len(f.targets.token_maps) == 4 and len(u.targets.token_maps) == 1
        joint = np.zeros(len(u.targets.token_maps[0]), dtype=bool)
        for m in f.targets.token_maps:
            joint |= np.asarray(m.probs) > 0
        np.testing.assert_array_equal(np.asarray(u.targets.token_maps[0].probs) > 0, joint)
        # class-name baseline: every slot points at the same class-name tokens
        first = np.asarray(c.targets.token_maps[0].probs)
        assert all(np.array_equal(np.asarray(m.probs), first) for m in c.targets.token_maps)
        assert not np.array_equal(first, np.asarray(f.targets.token_maps[1].probs))


def test_additive_fusion_is_mean_of_experts():
    cfg = small_cfg(moee_on=False).model_config(("a",), SMALL.height, SMALL.width)
    assert cfg.fusion_strategy == "add"
    params = init_params(cfg)
    rng = np.random.default_rng(0)
    masked = [JointStates(rng.normal(size=(1, 5, 8)), 3) for _ in range(NUM_EXPERTS)]
    fused, gates = fuse(masked, params, "add")
    experts = _experts2d(params, [m.values[0] for m in masked], 3)
    np.testing.assert_allclose(fused.values[0], sum(experts) / NUM_EXPERTS, atol=1e-14)
    np.testing.assert_array_equal(gates.lam, 0.25)


def test_evaluate_report_and_errors(corpus):
    cfg = small_cfg()
    res = train(cfg, corpus)
    val = [s for s in corpus if s.split == "val"]
    rep = evaluate(res.params, res.model_config, cfg, val)
    assert rep.overall["count"] == len(val)
    again = evaluate(res.params, res.model_config, cfg, val)
    assert rep.dumps() == again.dumps()
    with pytest.raises(UndefinedMetric):
        evaluate(res.params, res.model_config, cfg, [])
    other = dataclasses.replace(res.model_config, width=128, height=64)
    with pytest.raises(InvalidConfiguration):
        evaluate(res.params, other, cfg, val)


def test_truth_as_prediction_scores_one(corpus):
    recs = [EvalRecord(s.gt_box, s.gt_box, s.class_label, len(s.objects), 1, np.full(4, 0.25)) for s in corpus]
    for theta in (0.1, 0.5, 0.95, 0.999):
        assert report(recs, theta).top1 == 1.0


def test_non_finite_loss_aborts(corpus):
    with pytest.raises(NumericalFailure), np.errstate(all="ignore"):
        train(small_cfg(learning_rate=1e300, steps=5), corpus)
