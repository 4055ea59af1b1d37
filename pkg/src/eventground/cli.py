"""Command-line surface: generate, voxelize, train, eval, report, ground.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import dataset_hash, load_dataset
from .errors import EventGroundError, InvalidArgument, InvalidConfiguration, MissingFile
from .events import read_events, response_strength, voxelize
from .metrics import MetricsReport
from .synth import GridConfig, gen_corpus
from .text import SynonymTable
from .train import TrainConfig, evaluate, ground_prepared, load_config, parse_key_values, prepare, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_CHECKPOINT = "checkpoint.egck"


class UsageError(Exception):
    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


def _objects_range(text: str):
    lo, _, hi = text.partition("-")
    try:
        lo_i = int(lo)
        hi_i = int(hi) if hi else lo_i
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}")
    if lo_i < 1 or hi_i < lo_i:
        raise argparse.ArgumentTypeError(f"bad object range {text!r}")
    return lo_i, hi_i


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eventground", description="Attribute-aware grounding on event-camera data")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("generate", help="write a synthetic corpus")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, default=42, help="data seed")
    g.add_argument("--objects", type=_objects_range, default=(1, 6), help="N or LO-HI objects per scene")
    g.add_argument("--refs-per-scene", type=int, default=None)
    g.add_argument("--width", type=int, default=GridConfig.width)
    g.add_argument("--height", type=int, default=GridConfig.height)
    g.add_argument("--out", required=True)

    v = sub.add_parser("voxelize", help="voxel-grid statistics of an event file")
    v.add_argument("events", help="binary .evt or .json event file")
    v.add_argument("--bins", type=int, default=9)
    v.add_argument("--t-a", type=int, default=None)
    v.add_argument("--t-b", type=int, default=None)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config", default=None, help="flat key=value config file")
    t.add_argument("--data", required=True)
    t.add_argument("--seed", type=int, default=None, help="model seed override")
    t.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="config overrides")
    t.add_argument("--out", default=DEFAULT_CHECKPOINT)
    t.add_argument("--log", default=None, help="per-step log (default: <out>.log)")
    t.add_argument("--synonyms", default=None)
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", default=DEFAULT_CHECKPOINT)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val", help="train, val or all")
    e.add_argument("--theta", type=float, default=None)
    e.add_argument("--out", default=None, help="report JSON path")
    e.add_argument("--synonyms", default=None)

    r = sub.add_parser("report", help="re-render a saved report")
    r.add_argument("report")
    r.add_argument("--plot", default=None, help="write a lambda-vs-strength-bin figure here")

    gr = sub.add_parser("ground", help="ground one expression in one sample")
    gr.add_argument("--checkpoint", default=DEFAULT_CHECKPOINT)
    gr.add_argument("--data", required=True)
    gr.add_argument("--sample", required=True, help="sample id or position in the index")
    gr.add_argument("--expression", default=None, help="replace the sample's expression")
    gr.add_argument("--synonyms", default=None)
    return p


# -- subcommands -------------------------------------------------------------------

def _cmd_generate(a, out):
    grid = GridConfig(width=a.width, height=a.height)
    samples, manifest = gen_corpus(a.seed, a.scenes, a.objects, a.out, grid, a.refs_per_scene)
    print(f"wrote {len(samples)} samples from {a.scenes} scenes to {a.out}", file=out)


def _cmd_voxelize(a, out):
    window = read_events(a.events, a.t_a, a.t_b)
    grid = voxelize(window, a.bins)
    data = grid.data
    doc = {
        "shape": list(data.shape),
        "t_a": window.t_a,
        "t_b": window.t_b,
        "events_in_window": int(np.count_nonzero(window.in_window())),
        "total": int(grid.total()),
        "per_polarity": {"positive": int(data[0].sum()), "negative": int(data[1].sum())},
        "per_bin": [int(v) for v in data.sum(axis=(0, 2, 3))],
        "nonzero_voxels": response_strength(grid).raw,
        "max_count": int(data.max()) if data.size else 0,
    }
    print(json.dumps(doc, indent=2), file=out)


def _train_config(a) -> TrainConfig:
    overrides = parse_key_values("\n".join(a.set))
    if a.seed is not None:
        overrides["model_seed"] = str(a.seed)
    if a.config is None:
        return TrainConfig.from_mapping(overrides)
    if not Path(a.config).is_file():
        raise MissingFile(f"config file not found: {a.config}")
    return load_config(a.config, **overrides)


def _synonyms(path) -> Optional[SynonymTable]:
    return SynonymTable.load(path) if path else None


def _cmd_train(a, out):
    try:
        cfg = _train_config(a)
    except InvalidConfiguration as exc:
        raise UsageError(str(exc)) from exc
    samples = load_dataset(a.data)
    if not samples:
        raise InvalidArgument(f"dataset {a.data} has no samples")
    log_path = Path(a.log) if a.log else Path(str(a.out) + ".log")
    progress = None if a.quiet else (lambda line: print(line, file=out))
    result = train(cfg, samples, _synonyms(a.synonyms), progress=progress)
    ckpt = Checkpoint(result.params, result.model_config, cfg.dumps(), dataset_hash(a.data))
    save_checkpoint(a.out, ckpt)
    log_path.write_text("\n".join(result.log) + ("\n" if result.log else ""))
    print(f"checkpoint {a.out}  log {log_path}", file=out)


def _load_ckpt(path) -> Checkpoint:
    if not Path(path).is_file():
        raise MissingFile(f"no checkpoint at {path}; run `eventground train` first")
    return load_checkpoint(path)


def _cmd_eval(a, out):
    ckpt = _load_ckpt(a.checkpoint)
    split = None if a.split == "all" else a.split
    samples = load_dataset(a.data, split)
    cfg = ckpt.train_config()
    rep = evaluate(ckpt.params, ckpt.model_config, cfg, samples, a.theta, _synonyms(a.synonyms))
    if a.out:
        Path(a.out).write_text(rep.dumps())
    print(rep.table(), end="", file=out)


def _cmd_report(a, out):
    path = Path(a.report)
    if not path.is_file():
        raise MissingFile(f"no report at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"report is not valid JSON: {exc}") from exc
    rep = MetricsReport.from_json(doc)
    print(rep.table(), end="", file=out)
    if a.plot:
        plot_lambda_by_strength(rep, a.plot)
        print(f"figure {a.plot}", file=out)


def plot_lambda_by_strength(rep: MetricsReport, path) -> None:
    """Stacked mean gate weight per strength bin, one band per attribute expert."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bins = rep.expert_profile.get("per_strength_bin", {})
    if not bins:
        raise InvalidArgument("report has no per-strength-bin expert profile to plot")
    keys = sorted(bins, key=int)
    lam = np.array([bins[k]["mean_lambda"] for k in keys])
    from .text import ATTRIBUTES
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bottom = np.zeros(len(keys))
    for i, kind in enumerate(ATTRIBUTES):
        ax.bar(keys, lam[:, i], bottom=bottom, label=kind.value)
        bottom += lam[:, i]
    ax.set_xlabel("event response strength bin")
    ax.set_ylabel("mean gate weight")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _pick_sample(samples, key: str):
    for s in samples:
        if s.sample_id == key:
            return s
    try:
        return samples[int(key)]
    except (ValueError, IndexError):
        raise InvalidArgument(f"no sample {key!r} in dataset ({len(samples)} samples)") from None


def _cmd_ground(a, out):
    ckpt = _load_ckpt(a.checkpoint)
    sample = _pick_sample(load_dataset(a.data), a.sample)
    if a.expression is not None:
        # cue phrases stay those of the sample; fuzzy matching finds them in the new wording
        sample = dataclasses.replace(sample, expression=a.expression)
    cfg = ckpt.train_config()
    item = prepare([sample], ckpt.model_config, cfg, _synonyms(a.synonyms))[0]
    result = ground_prepared(ckpt.params, ckpt.model_config, item)
    doc = {"sample": sample.sample_id, "expression": sample.expression, **result.to_json()}
    print(json.dumps(doc, indent=2), file=out)


COMMANDS = {
    "generate": _cmd_generate,
    "voxelize": _cmd_voxelize,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "ground": _cmd_ground,
}


def cli(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except UsageError as exc:
        print(exc.usage, end="", file=err)
        print(f"eventground: error: {exc}", file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"eventground {args.command}: error: {exc}", file=err)
        return EXIT_USAGE
    except (EventGroundError, OSError) as exc:
        print(f"eventground {args.command}: {type(exc).__name__}: {exc}", file=err)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
