"""The eleven acceptance criteria, each at its stated size and tolerance.

Every test records a one-line verdict (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import itertools
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from conftest import VERDICTS
from helpers import hand_records
from eventground.boxes import BoxXYWH, from_corners, giou, iou
from eventground.cli import cli
from eventground.events import EventWindow, strength_bin, voxelize
from eventground.gradcheck import gradient_check_report
from eventground.inference import score_queries, select_box
from eventground.matching import CostMatrix, hungarian_assign
from eventground.metrics import miou, report, top1_acc
from eventground.model import (NUM_EXPERTS, JointStates, ModelConfig, QueryOutput, SampleInput, forward,
                               init_params, moee_fuse)
from eventground.synth import GridConfig, gen_corpus
from eventground.text import SoftTokenMap, expression_maps, soften, tokenize
from eventground.train import TrainConfig, build_vocab, evaluate, prepare, train

REPORT_DIR = Path(__file__).resolve().parent.parent / "acceptance_reports"


def verdict(key, title, ok, detail):
    VERDICTS[key] = (bool(ok), title, detail)
    assert ok, f"criterion {key} ({title}) failed: {detail}"


# 1 -------------------------------------------------------------------------

def test_01_voxel_conservation():
    rng = np.random.default_rng(1)
    n, t_a, t_b = 100_000, 10_000, 60_000
    x = rng.integers(0, 128, n)
    y = rng.integers(0, 64, n)
    t = np.sort(rng.integers(0, 70_000, n))
    p = rng.choice([-1, 1], n)
    window = EventWindow(x, y, t, p, t_a, t_b, 128, 64)
    exact = int(((t >= t_a) & (t <= t_b)).sum())
    sums, worst = [], 0.0
    for bins in (1, 5, 9):
        start = time.perf_counter()
        grid = voxelize(window, bins)
        worst = max(worst, time.perf_counter() - start)
        sums.append(int(grid.data.sum()))
    ok = all(s == exact for s in sums) and worst < 1.0
    verdict(1, "voxelization conservation", ok,
            f"in-window {exact}, sums {sums} for T=1,5,9, slowest {worst * 1e3:.1f} ms")


# 2 -------------------------------------------------------------------------

def _ordered_cost(cost, cols):
    total = 0.0
    for target, q in enumerate(cols):
        total += cost[q, target]
    return total


def test_02_hungarian_matches_brute_force():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    mismatches = 0
    for k in range(500):
        q = 4 + k % 4
        cost = rng.normal(size=(q, 4)) * rng.choice([0.1, 1.0, 10.0])
        got = hungarian_assign(CostMatrix(cost, 2.0, 1.0))
        mine = _ordered_cost(cost, got.query_of_target)
        best = min(_ordered_cost(cost, perm) for perm in itertools.permutations(range(q), 4))
        mismatches += mine != best
    elapsed = time.perf_counter() - start
    verdict(2, "Hungarian oracle equivalence", mismatches == 0 and elapsed < 10,
            f"{mismatches} of 500 differ from brute force, {elapsed:.2f} s")


# 3 -------------------------------------------------------------------------

def _box(rng):
    x1, x2 = np.sort(rng.random(2))
    y1, y2 = np.sort(rng.random(2))
    return BoxXYWH.of(from_corners(x1, y1, max(x2, x1 + 1e-3), max(y2, y1 + 1e-3)))


def test_03_giou_properties():
    rng = np.random.default_rng(3)
    tol = 1e-9
    bad = 0
    for _ in range(10_000):
        a, b = _box(rng), _box(rng)
        g, u = giou(a, b), iou(a, b)
        bad += not (g <= u + tol and -1 < g <= 1 + tol and abs(g - giou(b, a)) <= tol and abs(giou(a, a) - 1) <= tol)
    c = lambda *v: BoxXYWH.of(from_corners(*v))
    examples = [giou(c(0.2, 0.3, 0.6, 0.9), c(0.2, 0.3, 0.6, 0.9)),
                giou(c(0, 0, 0.5, 0.5), c(0.5, 0, 1, 0.5)),
                giou(c(0, 0, 0.1, 0.1), c(0.9, 0, 1, 0.1))]
    ex_ok = all(abs(v - e) <= tol for v, e in zip(examples, (1.0, 0.0, -0.8)))
    verdict(3, "GIoU properties", bad == 0 and ex_ok,
            f"{bad} of 10000 pairs violate a property; examples {[round(v, 12) for v in examples]}")


# 4 -------------------------------------------------------------------------

def test_04_positive_map_algebra():
    samples, _ = gen_corpus(4, 400, (1, 6))
    samples = samples[:1000]
    assert len(samples) == 1000
    worst_sum, tiling_bad = 0.0, 0
    for s in samples:
        maps = expression_maps(tokenize(s.expression), s.spans)
        stack = np.stack([p.bits for p in maps.positives] + [maps.public.bits]).astype(int)
        tiling_bad += not np.all(stack.sum(axis=0) == 1)
        for m in list(maps.positives) + [maps.public]:
            if m.bits.any():
                worst_sum = max(worst_sum, abs(soften(m).probs.sum() - 1.0))
    verdict(4, "positive-map algebra", worst_sum <= 1e-9 and tiling_bad == 0,
            f"max |sum-1| {worst_sum:.1e}, {tiling_bad} of 1000 expressions fail to tile")


# 5 -------------------------------------------------------------------------

def test_05_gate_simplex_and_symmetry():
    cfg = ModelConfig(channel_width=8, num_queries=4, visual_patch=16, height=32, width=64, bins=3,
                      vocab=tuple("abcdefg"))
    rng = np.random.default_rng(5)
    params = init_params(cfg)
    params["gate_sigma"] = np.array([1.0])
    worst = 0.0
    negative = False
    for i in range(1000):
        n_tok = 3 + i % 6
        sample = SampleInput(rng.normal(size=(cfg.num_patches, cfg.visual_dim)) * 3,
                             rng.integers(0, len(cfg.vocab), n_tok), (rng.random((4, n_tok)) > 0.5).astype(float))
        out, _ = forward(params, cfg, sample, rng=rng)
        worst = max(worst, abs(out.lam.sum() - 1.0))
        negative |= bool((out.lam < 0).any())
    sym = init_params(cfg)
    for i in range(1, NUM_EXPERTS):
        for part in ("u", "r", "d"):
            sym[f"exp{i}_{part}"] = sym[f"exp0_{part}"].copy()
    sym["gate_w"] = np.kron(np.ones((NUM_EXPERTS, NUM_EXPERTS)), rng.normal(size=(cfg.channel_width, 1)))
    sym["gate_sigma"] = np.array([0.0])
    h = JointStates(rng.normal(size=(3, 9, cfg.channel_width)), 5)
    _, gates = moee_fuse([h] * 4, sym, noise_enabled=True, rng=rng)
    dev = float(np.abs(gates.lam - 0.25).max())
    verdict(5, "gate simplex and symmetry", worst <= 1e-9 and not negative and dev <= 1e-9,
            f"max |sum lambda - 1| {worst:.1e} over 1000 noisy forwards, symmetric deviation {dev:.1e}")


# 6 -------------------------------------------------------------------------

def test_06_gradient_check_default_model():
    grid = GridConfig(width=64, height=32)
    samples, _ = gen_corpus(6, 1, (3, 3), grid=grid)
    cfg = TrainConfig(visual_patch=16)
    model_cfg = cfg.model_config(build_vocab(samples), grid.height, grid.width)
    assert (model_cfg.channel_width, model_cfg.num_queries) == (32, 16)
    item = prepare(samples[:1], model_cfg, cfg)[0]
    params = init_params(model_cfg)
    start = time.perf_counter()
    rep = gradient_check_report(params, model_cfg, item.inputs, item.targets, 1e-5)
    elapsed = time.perf_counter() - start
    verdict(6, "gradient check", rep.max_relative_error < 1e-4 and elapsed < 120,
            f"max rel error {rep.max_relative_error:.2e} over {rep.checked} parameters "
            f"(worst {rep.worst_parameter}{list(rep.worst_index)}; {rep.refined} re-run in extended "
            f"precision), {elapsed:.1f} s")


# 7 -------------------------------------------------------------------------

def test_07_inference_invariances():
    rng = np.random.default_rng(7)
    # dyadic logits and integer shifts keep every softmax input exact
    logits = rng.integers(-8, 8, (5, 6)) / 4.0
    maps = [SoftTokenMap(np.eye(6)[i] * 0.5 + np.eye(6)[(i + 1) % 6] * 0.5) for i in range(4)]
    base = score_queries(QueryOutput(np.full((5, 4), 0.5), logits), maps).scores
    shift_ok = True
    for shift in (-3.0, 1.0, 7.0):
        # one constant per query row
        moved = logits + rng.integers(-4, 4, (5, 1)) + shift
        shift_ok &= np.array_equal(score_queries(QueryOutput(np.full((5, 4), 0.5), moved), maps).scores, base)
    # ties: two queries and two attributes share the maximum
    tie_logits = np.array([[0.0, 0.0, 0.0, 0.0], [2.0, 2.0, 0.0, 0.0], [2.0, 2.0, 0.0, 0.0]])
    tie_maps = [SoftTokenMap(np.array(v)) for v in ([0, 0, 1, 0], [0.5, 0.5, 0, 0], [0.5, 0.5, 0, 0], [0, 0, 0, 1])]
    boxes = np.array([[0.1] * 4, [0.2] * 4, [0.3] * 4])
    out = QueryOutput(boxes, tie_logits)
    res = select_box(score_queries(out, tie_maps), out)
    tie_ok = res.query_index == 1 and res.attribute.value == "status"
    worst_low, worst_high = 1.0, 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 12))
        lg = rng.normal(size=(1, n)) * rng.choice([0.1, 1, 10, 50])
        p = rng.random(n) * (rng.random(n) > 0.3)
        if p.sum() == 0:
            p[0] = 1.0
        p = p / p.sum()
        s = score_queries(QueryOutput(np.full((1, 4), 0.5), lg), [SoftTokenMap(p)]).scores[0, 0]
        worst_low, worst_high = min(worst_low, s), max(worst_high, s - p.max())
    ok = shift_ok and tie_ok and worst_low > 0 and worst_high <= 1e-12
    verdict(7, "inference invariances", ok,
            f"exact shift {shift_ok}, tie -> query {res.query_index}/{res.attribute.value}, "
            f"min score {worst_low:.2e}, max score - max map {worst_high:.1e}")


# 8 and 9 -------------------------------------------------------------------

_RUNS: dict = {}
_CORPUS: dict = {}


def _corpus():
    if "samples" not in _CORPUS:
        _CORPUS["samples"] = gen_corpus(42, 500, (3, 3))[0]
    return _CORPUS["samples"]


def _run(**overrides):
    key = tuple(sorted(overrides.items()))
    if key not in _RUNS:
        samples = _corpus()
        cfg = TrainConfig(log_every=1000, **overrides)
        res = train(cfg, samples)
        val = [s for s in samples if s.split == "val"]
        _RUNS[key] = evaluate(res.params, res.model_config, cfg, val)
    return _RUNS[key]


def test_08_end_to_end_grounding():
    start = time.perf_counter()
    _CORPUS.clear()
    fusion = _run(modality="fusion", model_seed=0)
    event = _run(modality="event", model_seed=0)
    elapsed = time.perf_counter() - start
    ok = fusion.top1 >= 0.70 and event.top1 >= 0.55 and elapsed < 15 * 60
    verdict(8, "end-to-end toy grounding", ok,
            f"val top1@0.5 fusion {fusion.top1:.3f} (need 0.70), event-only {event.top1:.3f} (need 0.55), "
            f"random pick 0.333, {elapsed / 60:.1f} min")


def test_09_ablation_directions():
    seeds = (0, 1, 2)
    arms = {
        "moee": dict(modality="fusion"),
        "add": dict(modality="fusion", moee_on=False),
        "class_name_only": dict(modality="fusion", pwm_on=False, maf_on=False),
    }
    macc = {name: [_run(model_seed=s, **kw).macc for s in seeds] for name, kw in arms.items()}
    mean = {name: float(np.mean(v)) for name, v in macc.items()}
    directions = [
        ("MoEE fusion >= additive fusion", mean["moee"] >= mean["add"], "moee", "add"),
        ("PWM+MAF >= class-name-only", mean["moee"] >= mean["class_name_only"], "moee", "class_name_only"),
    ]
    lines = ["ablation directions, val mAcc on the 500-scene corpus (3 objects, data seed 42), model seeds 0,1,2", ""]
    for name, vals in macc.items():
        lines.append(f"{name:16s} " + " ".join(f"{v:.4f}" for v in vals) + f"   mean {mean[name]:.4f}")
    lines.append("")
    for text, ok, a, b in directions:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {text}  ({mean[a]:.4f} vs {mean[b]:.4f})")
    REPORT_DIR.mkdir(exist_ok=True)
    (REPORT_DIR / "ablation_directions.txt").write_text("\n".join(lines) + "\n")
    verdict(9, "ablation directions", all(ok for _, ok, _, _ in directions),
            "; ".join(f"{t}: {'pass' if ok else 'fail'} ({mean[a]:.3f} vs {mean[b]:.3f})"
                      for t, ok, a, b in directions))


# 10 ------------------------------------------------------------------------

def test_10_metrics_fixture():
    records, expected = hand_records()
    exact = (top1_acc(records, 0.95) == float(expected["top1_095"])
             and top1_acc(records, 0.5) == float(expected["top1_05"])
             and miou(records) == float(expected["miou"]))
    edges = [Fraction(i, 7) for i in range(8)]
    probes = sorted({float(e) for e in edges} | {float(e) - 1e-12 for e in edges[1:]}
                    | {float(e) + 1e-12 for e in edges[:-1]} | set(np.linspace(0, 1, 1001).tolist()))
    bins = [strength_bin(v) for v in probes]
    partition = all(1 <= b <= 7 for b in bins) and bins == sorted(bins) and set(bins) == set(range(1, 8))
    partition &= all(strength_bin(float(e)) == min(i + 1, 7) for i, e in enumerate(edges))
    rep = report(records, 0.5)
    counts = sum(v["count"] for v in rep.per_strength_bin.values())
    ok = exact and partition and counts == len(records)
    verdict(10, "metrics fixture", ok,
            f"top1@0.95 {top1_acc(records, 0.95)}, top1@0.5 {top1_acc(records, 0.5)}, mIoU {miou(records)} "
            f"(exact {exact}); bins partition {partition}; bin counts {counts}/{len(records)}")


# 11 ------------------------------------------------------------------------

def _pipeline(root: Path):
    root.mkdir(parents=True)
    steps = [
        ["generate", "--scenes", "20", "--seed", "11", "--objects", "3", "--out", str(root / "data")],
        ["train", "--data", str(root / "data"), "--seed", "3", "--set", "steps=150", "--quiet",
         "--out", str(root / "model.egck")],
        ["eval", "--checkpoint", str(root / "model.egck"), "--data", str(root / "data"),
         "--out", str(root / "report.json")],
    ]
    for argv in steps:
        assert cli(argv, open("/dev/null", "w"), open("/dev/null", "w")) == 0, argv
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_11_reproducibility(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    differing = [str(k) for k in a if a[k] != b.get(k)]
    key_files = {Path("model.egck"), Path("report.json"), Path("data/index.json")}
    ok = a.keys() == b.keys() and not differing and key_files <= a.keys()
    verdict(11, "reproducibility", ok,
            f"{len(a)} files compared (corpus, checkpoint, log, report), {len(differing)} differ")
