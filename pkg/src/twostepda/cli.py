"""Command-line driver.  Every subcommand echoes its config into ``--out``.

Errors are reported as one JSON line on stderr, e.g.
``{"error": "config", "message": "unknown config key 'foo'"}``, with exit code
2 for usage errors, 3 for config errors and 1 otherwise.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import pipeline
from .datagen import Dataset
from .errors import ConfigError, InputError, TwoStepError
from .metrics import ConfusionMatrix, iou
from .pipeline import BenchmarkConfig, RankingArtifacts
from .pseudolabel import to_pseudo_label
from .ranking import SplitAssignment, read_csv, split, write_csv
from .tensorio import load_checkpoint, read_tensor_dir, save_checkpoint, write_tensor_dir


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print multi-line usage and exit 2
        raise _UsageExit(message)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def _lambdas(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lambda list {text!r}") from None


# --------------------------------------------------------------------------
# helpers


def _load_config(args) -> BenchmarkConfig:
    if args.config is None:
        return pipeline.segmentation_benchmark()
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return BenchmarkConfig.from_dict(raw)


def _override(bench: BenchmarkConfig, args) -> BenchmarkConfig:
    changes = {}
    if getattr(args, "lam", None) is not None:
        changes["lam"] = args.lam
    if getattr(args, "normalize_rank", False):
        changes["use_normalized_ranking"] = True
    return bench.with_stage(**changes) if changes else bench


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, bench: BenchmarkConfig) -> None:
    (out / "config.json").write_text(json.dumps(bench.to_dict(), indent=2, sort_keys=True))


def _probmaps(args, bench: BenchmarkConfig) -> tuple[list[str], np.ndarray]:
    """Soft predictions from ``--probmaps`` or from ``--checkpoint`` on ``--data``."""
    if args.probmaps is not None:
        maps = read_tensor_dir(args.probmaps, "float32")
        if not maps:
            raise InputError(f"no .tnsr files in {args.probmaps}")
        ids = list(maps)
        return ids, np.stack([maps[k] for k in ids])
    if args.checkpoint is None or args.data is None:
        raise _UsageExit("need --probmaps, or both --checkpoint and --data")
    g, _ = load_checkpoint(args.checkpoint)
    data = Dataset.load(args.data)
    return data.ids, pipeline.predict(bench, g, data.images)


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> None:
    bench = _load_config(args)
    out = _out(args)
    source, target, target_eval = pipeline.make_datasets(bench, args.seed)
    source.save(out / "source")
    target.save(out / "target_train")
    target_eval.save(out / "target_eval")
    _echo_config(out, bench)


def cmd_train_inter(args) -> None:
    bench = _load_config(args)
    out = _out(args)
    source = Dataset.load(Path(args.data) / "source")
    target = Dataset.load(Path(args.data) / "target_train")
    res = pipeline.train_inter(bench, source, target, args.seed, adversarial=not args.source_only)
    cfg = bench.to_dict()
    save_checkpoint(out / "generator", res.generator, cfg["generator"], args.seed)
    if res.discriminator is not None:
        save_checkpoint(out / "discriminator", res.discriminator, cfg["discriminator"], args.seed)
    (out / "curves.json").write_text(json.dumps(res.curves, sort_keys=True))
    _echo_config(out, bench)


def cmd_rank(args) -> None:
    bench = _override(_load_config(args), args)
    out = _out(args)
    ids, probs = _probmaps(args, bench)
    records = pipeline.rank_probmaps(bench, ids, probs)
    assignment = split(records, bench.stage.lam, bench.stage.use_normalized_ranking)
    write_csv(out / "ranking.csv", records, assignment, bench.stage.use_normalized_ranking)
    _echo_config(out, bench)


def cmd_split(args) -> None:
    bench = _override(_load_config(args), args)
    out = _out(args)
    if args.ranking is not None:
        records, _ = read_csv(args.ranking)
    else:
        records = pipeline.rank_probmaps(bench, *_probmaps(args, bench))
    assignment = split(records, bench.stage.lam, bench.stage.use_normalized_ranking)
    write_csv(out / "ranking.csv", records, assignment, bench.stage.use_normalized_ranking)
    (out / "split.json").write_text(json.dumps(assignment.to_dict(), indent=2, sort_keys=True))
    _echo_config(out, bench)


def _read_split(path) -> tuple[list[str], list[str]]:
    d = json.loads(Path(path).read_text())
    try:
        return list(d["easy"]), list(d["hard"])
    except KeyError as exc:
        raise InputError(f"{path}: split file lacks {exc}") from None


def cmd_pseudo_label(args) -> None:
    bench = _load_config(args)
    out = _out(args)
    ids, probs = _probmaps(args, bench)
    keep = set(ids) if args.split is None else set(_read_split(args.split)[0])
    labels = to_pseudo_label(probs).astype(np.int32)
    write_tensor_dir(out / "pseudo", {k: labels[i] for i, k in enumerate(ids) if k in keep})
    _echo_config(out, bench)


def cmd_train_intra(args) -> None:
    bench = _override(_load_config(args), args)
    out = _out(args)
    g_inter, _ = load_checkpoint(args.checkpoint)
    target = Dataset.load(args.data)
    if args.split is not None:
        if args.pseudo is None:
            raise _UsageExit("--split needs --pseudo")
        easy, hard = _read_split(args.split)
        pseudo = read_tensor_dir(args.pseudo, "int32")
        missing = [k for k in easy if k not in pseudo]
        if missing:
            raise InputError(f"no pseudo label for {missing[0]}")
        art = RankingArtifacts([], SplitAssignment(bench.stage.lam, easy, hard,
                                                   bench.stage.use_normalized_ranking),
                               {k: pseudo[k] for k in easy}, np.zeros(0))
    else:
        art = pipeline.generate_ranking_artifacts(bench, g_inter, target)
    res = pipeline.train_intra(bench, g_inter, target, art, args.seed)
    cfg = bench.to_dict()
    save_checkpoint(out / "generator", res.generator, cfg["generator"], args.seed)
    if res.discriminator is not None:
        save_checkpoint(out / "discriminator", res.discriminator, cfg["discriminator"], args.seed)
    (out / "curves.json").write_text(json.dumps(res.curves, sort_keys=True))
    _echo_config(out, bench)


def cmd_eval(args) -> None:
    bench = _load_config(args)
    out = _out(args)
    if args.probmaps is not None:
        ids, probs = _probmaps(args, bench)
        if args.labels is None:
            raise _UsageExit("--probmaps evaluation needs --labels")
        labels = read_tensor_dir(args.labels, "int32")
        missing = [k for k in ids if k not in labels]
        if missing:
            raise InputError(f"no label for {missing[0]}")
        gt = np.stack([labels[k] for k in ids])
        num_classes = probs.shape[1]
    else:
        ids, probs = _probmaps(args, bench)
        gt = Dataset.load(args.data).evaluation_labels()
        num_classes = bench.generator.num_classes
    cm = ConfusionMatrix(num_classes).accumulate(to_pseudo_label(probs), gt)
    result = iou(cm)
    (out / "iou.csv").write_text(result.to_csv())
    metrics = {"miou": result.miou, "accuracy": cm.accuracy(), "images": len(ids)}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    print(result.summary())
    _echo_config(out, bench)


def _seeds(args) -> list[int]:
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    return list(range(args.seeds))


def cmd_run_experiment(args) -> None:
    bench = _override(_load_config(args), args)
    result = pipeline.run_experiment(bench, _seeds(args), args.lambdas or (), _out(args), args.jobs)
    print(json.dumps(result.to_dict()["summary"], sort_keys=True))


def cmd_ablate_lambda(args) -> None:
    bench = _override(_load_config(args), args)
    if not args.lambdas:
        raise _UsageExit("--lambdas is required")
    pipeline.run_lambda_ablation(bench, args.lambdas, _seeds(args), _out(args), args.jobs)
    print((Path(args.out) / "ablation.csv").read_text(), end="")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twostepda", description="Two-stage entropy-based domain adaptation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text, *, lam=False, probmaps=False):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON benchmark config (defaults to the segmentation benchmark)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        if lam:
            p.add_argument("--lambda", dest="lam", type=float)
            p.add_argument("--normalize-rank", action="store_true")
        if probmaps:
            p.add_argument("--probmaps", help="directory of externally produced C x H x W tensors")
            p.add_argument("--checkpoint", help="generator checkpoint directory")
            p.add_argument("--data", help="dataset directory written by gen-data")
        return p

    add("gen-data", cmd_gen_data, "write source/target datasets")
    p = add("train-inter", cmd_train_inter, "inter-domain adversarial training")
    p.add_argument("--data", required=True, help="directory written by gen-data")
    p.add_argument("--source-only", action="store_true", help="skip the adversarial term")
    add("rank", cmd_rank, "entropy ranking of target predictions", lam=True, probmaps=True)
    p = add("split", cmd_split, "easy/hard split from a ranking", lam=True, probmaps=True)
    p.add_argument("--ranking", help="ranking.csv written by rank")
    p = add("pseudo-label", cmd_pseudo_label, "argmax pseudo labels", probmaps=True)
    p.add_argument("--split", help="split.json; only easy images get labels")
    p = add("train-intra", cmd_train_intra, "intra-domain adaptation", lam=True)
    p.add_argument("--checkpoint", required=True, help="inter-domain generator checkpoint")
    p.add_argument("--data", required=True, help="target_train dataset directory")
    p.add_argument("--split", help="split.json from split")
    p.add_argument("--pseudo", help="pseudo-label directory from pseudo-label")
    p = add("eval", cmd_eval, "mIoU on a labelled split", probmaps=True)
    p.add_argument("--labels", help="directory of int32 label tensors for --probmaps")
    for name, func, text in (("run-experiment", cmd_run_experiment, "all variants over seeds"),
                             ("ablate-lambda", cmd_ablate_lambda, "lambda ablation table")):
        p = add(name, func, text, lam=True)
        p.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..N-1")
        p.add_argument("--lambdas", type=_lambdas)
        p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageExit as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with ad.no_grad() if args.command in ("rank", "split", "pseudo-label", "eval") else contextlib.nullcontext():
            args.func(args)
    except _UsageExit as exc:
        return _fail("usage", exc, 2)
    except TwoStepError as exc:
        return _fail(exc.kind, exc, exc.exit_code)
    except (OSError, ValueError, KeyError) as exc:
        return _fail("io" if isinstance(exc, OSError) else "input", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
