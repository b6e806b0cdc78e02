"""Three-stage training (inter-domain, ranking, intra-domain) and the experiment harness."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import autodiff as ad
from . import losses
from .autodiff import ParameterSet
from .datagen import (EVAL, SOURCE, TARGET, Dataset, DomainConfig,
                      gen_classification_domain, gen_segmentation_domain)
from .errors import ConfigError, InputError
from .metrics import ConfusionMatrix, iou
from .models import (CLASSIFICATION, SEGMENTATION, DiscriminatorConfig, GeneratorConfig,
                     discriminator_input, forward_discriminator, generator_logits,
                     init_discriminator,
                     init_generator, probabilities)
from .pseudolabel import to_pseudo_label
from .ranking import RankRecord, RareClassSet, SplitAssignment, make_record, split
from .ranking import write_csv as write_ranking_csv
from .tensorio import save_checkpoint, write_tensor

log = logging.getLogger(__name__)

BASE_G_LR = 2.5e-4
BASE_D_LR = 1e-4

# independent RNG streams so that, e.g., source-only and inter-domain runs draw
# identical source batches
_SOURCE_STREAM, _TARGET_STREAM, _EASY_STREAM, _HARD_STREAM = 11, 12, 21, 22


@dataclass
class StageConfig:
    inter_iterations: int = 3000
    intra_iterations: int = 2000
    batch_size: int = 2
    lr_scale: float = 1.0
    g_momentum: float = 0.9
    g_weight_decay: float = 1e-4
    d_lr_scale: float = 1.0
    adv_weight: float = 0.001
    intra_adv_weight: float | None = None
    pseudo_weight: float = 1.0
    seg_reduction: str = "sum"
    adv_reduction: str = "mean"
    lam: float = 0.67
    use_normalized_ranking: bool = False
    init_intra_from_inter: bool = True
    curve_window: int = 50
    # "constant", or "poly": lr * (1 - t / T) ** lr_power for both G and D
    lr_schedule: str = "constant"
    lr_power: float = 0.9

    def __post_init__(self):
        if self.inter_iterations < 1 or self.intra_iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.lr_scale <= 0 or self.d_lr_scale <= 0:
            raise ConfigError("learning-rate scales must be positive")
        if self.adv_weight < 0 or self.pseudo_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lr_schedule not in ("constant", "poly"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")
        for r in (self.seg_reduction, self.adv_reduction):
            if r not in ("sum", "mean"):
                raise ConfigError(f"unknown reduction {r!r}")

    @property
    def g_lr(self) -> float:
        return BASE_G_LR * self.lr_scale

    @property
    def d_lr(self) -> float:
        return BASE_D_LR * self.d_lr_scale

    def decay(self, step: int, total: int) -> float:
        """Learning-rate multiplier at ``step`` of ``total``."""
        if self.lr_schedule == "constant":
            return 1.0
        return (1.0 - step / total) ** self.lr_power

    @property
    def intra_weight(self) -> float:
        return self.adv_weight if self.intra_adv_weight is None else self.intra_adv_weight


@dataclass
class BenchmarkConfig:
    """Everything needed to reproduce one experiment; echoed to ``config.json``."""

    task: str = SEGMENTATION
    source: DomainConfig = field(default_factory=lambda: DomainConfig(role=SOURCE, count=400))
    target_train: DomainConfig = field(default_factory=lambda: DomainConfig(
        role=TARGET, count=300, domain_shift=1.0, intra_variance=0.3))
    target_eval: DomainConfig = field(default_factory=lambda: DomainConfig(
        role=TARGET, split=EVAL, count=100, domain_shift=1.0, intra_variance=0.3))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    stage: StageConfig = field(default_factory=StageConfig)
    rare_classes: list[int] = field(default_factory=lambda: [4])
    rare_threshold: float = 0.001
    eval_batch: int = 50

    def __post_init__(self):
        if self.task not in (SEGMENTATION, CLASSIFICATION):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.generator.mode != self.task or self.discriminator.mode != self.task:
            raise ConfigError("generator/discriminator mode must match the task")
        if self.discriminator.num_classes != self.generator.num_classes:
            raise ConfigError("generator and discriminator disagree on the class count")

    @property
    def rare(self) -> RareClassSet:
        return RareClassSet(frozenset(self.rare_classes), self.rare_threshold)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "source": self.source.to_dict(),
            "target_train": self.target_train.to_dict(),
            "target_eval": self.target_eval.to_dict(),
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "stage": asdict(self.stage),
            "rare_classes": list(self.rare_classes),
            "rare_threshold": self.rare_threshold,
            "eval_batch": self.eval_batch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        base = (classification_benchmark() if d.get("task") == CLASSIFICATION
                else segmentation_benchmark()).to_dict()
        merged = _merge(base, d)
        try:
            return cls(
                task=merged["task"],
                source=_build(DomainConfig, merged["source"]),
                target_train=_build(DomainConfig, merged["target_train"]),
                target_eval=_build(DomainConfig, merged["target_eval"]),
                generator=_build(GeneratorConfig, merged["generator"]),
                discriminator=_build(DiscriminatorConfig, merged["discriminator"]),
                stage=_build(StageConfig, merged["stage"]),
                rare_classes=list(merged["rare_classes"]),
                rare_threshold=float(merged["rare_threshold"]),
                eval_batch=int(merged["eval_batch"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def with_stage(self, **changes) -> "BenchmarkConfig":
        d = self.to_dict()
        d["stage"].update(changes)
        return BenchmarkConfig.from_dict(d)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v)
        else:
            out[k] = v
    return out


def _build(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def segmentation_benchmark() -> BenchmarkConfig:
    """The default desk-scale segmentation benchmark.

    Target images are hue-rotated by 20 degrees plus up to 30 more that scale
    with the per-image difficulty, so hard images also carry systematically
    wrong pseudo labels.
    """
    shift = dict(domain_shift=1.0, intra_variance=0.3, hue_degrees=20.0, difficulty_hue=100.0)
    return BenchmarkConfig(
        task=SEGMENTATION,
        source=DomainConfig(role=SOURCE, count=400, seed=1),
        target_train=DomainConfig(role=TARGET, count=300, seed=2, **shift),
        target_eval=DomainConfig(role=TARGET, split=EVAL, count=100, seed=3, **shift),
        generator=GeneratorConfig(num_classes=5),
        discriminator=DiscriminatorConfig(num_classes=5),
        stage=StageConfig(inter_iterations=1500, intra_iterations=1000, lr_scale=40.0,
                          seg_reduction="mean", adv_weight=0.001, intra_adv_weight=3e-5,
                          lr_schedule="poly"),
    )


def classification_benchmark() -> BenchmarkConfig:
    """Rotated two-moons track; lambda 0.8 as used for digits."""
    shift = dict(domain_shift=45.0, intra_variance=0.15)
    return BenchmarkConfig(
        task=CLASSIFICATION,
        source=DomainConfig(role=SOURCE, count=600, num_classes=2, rare_classes=[], seed=1),
        target_train=DomainConfig(role=TARGET, count=600, num_classes=2, rare_classes=[],
                                  seed=2, **shift),
        target_eval=DomainConfig(role=TARGET, split=EVAL, count=600, num_classes=2,
                                 rare_classes=[], seed=3, **shift),
        generator=GeneratorConfig(num_classes=2, input_channels=2, widths=[32, 32],
                                  mode=CLASSIFICATION),
        discriminator=DiscriminatorConfig(num_classes=2, widths=[16, 32], mode=CLASSIFICATION),
        stage=StageConfig(inter_iterations=600, intra_iterations=400, batch_size=32,
                          lr_scale=40.0, seg_reduction="mean", adv_weight=0.1, lam=0.8,
                          lr_schedule="poly"),
        rare_classes=[],
    )


# --------------------------------------------------------------------------
# data with per-seed reseeding


def _reseed(cfg: DomainConfig, seed: int) -> DomainConfig:
    d = cfg.to_dict()
    d["seed"] = cfg.seed + 1000 * seed
    return DomainConfig(**d)


def make_datasets(bench: BenchmarkConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    gen = gen_segmentation_domain if bench.task == SEGMENTATION else gen_classification_domain
    return (gen(_reseed(bench.source, seed)), gen(_reseed(bench.target_train, seed)),
            gen(_reseed(bench.target_eval, seed)))


# --------------------------------------------------------------------------
# stages


@dataclass
class InterResult:
    generator: ParameterSet
    discriminator: ParameterSet | None
    curves: dict[str, list[float]]


class _Curve:
    def __init__(self, window: int):
        self.window, self.buf, self.points = window, [], []

    def add(self, v: float) -> None:
        self.buf.append(v)
        if len(self.buf) == self.window:
            self.points.append(float(np.mean(self.buf)))
            self.buf = []

    def values(self) -> list[float]:
        return self.points + ([float(np.mean(self.buf))] if self.buf else [])


def _g_forward(gcfg, g, x):
    logits = generator_logits(gcfg, g, x)
    return logits, probabilities(logits)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def train_inter(bench: BenchmarkConfig, source: Dataset, target: Dataset | None, seed: int,
                adversarial: bool = True) -> InterResult:
    """Stage 1: supervised source loss plus entropy-map adversarial alignment.

    ``adversarial=False`` (or ``adv_weight == 0``) drops the target branch and
    the discriminator, i.e. source-only training.
    """
    st, gcfg, dcfg = bench.stage, bench.generator, bench.discriminator
    if len(source) == 0:
        raise InputError("empty source dataset")
    adversarial = adversarial and st.adv_weight > 0
    if adversarial and (target is None or len(target) == 0):
        raise InputError("empty target dataset")
    ys = source.supervision()
    g = init_generator(gcfg, seed)
    d = init_discriminator(dcfg, seed + 7919) if adversarial else None
    src_rng, tgt_rng = _rng(seed, _SOURCE_STREAM), _rng(seed, _TARGET_STREAM)
    seg_c, adv_c, d_c = (_Curve(st.curve_window) for _ in range(3))
    for it in range(st.inter_iterations):
        f = st.decay(it, st.inter_iterations)
        si = src_rng.integers(0, len(source), st.batch_size)
        logits_s, p_s = _g_forward(gcfg, g, source.images[si])
        seg = losses.seg_cross_entropy(p_s, ys[si], st.seg_reduction)
        loss = seg
        if adversarial:
            ti = tgt_rng.integers(0, len(target), st.batch_size)
            logits_t, p_t = _g_forward(gcfg, g, target.images[ti])
            d_t = _disc(bench, d, p_t, logits_t)
            adv = losses.generator_adv_loss(d_t, st.adv_reduction)
            loss = losses.total_generator_objective(seg, adv, st.adv_weight)
            adv_c.add(adv.item())
        ad.backward(loss)
        ad.sgd_step(g, st.g_lr * f, st.g_momentum, st.g_weight_decay)
        seg_c.add(seg.item())
        if adversarial:
            d.zero_grad()
            d_loss = losses.domain_discriminator_loss(
                _disc(bench, d, p_s.detach(), logits_s.detach()),
                _disc(bench, d, p_t.detach(), logits_t.detach()), st.adv_reduction)
            ad.backward(d_loss)
            ad.adam_step(d, st.d_lr * f)
            d_c.add(d_loss.item())
    curves = {"seg": seg_c.values()}
    if adversarial:
        curves.update(adv=adv_c.values(), disc=d_c.values())
    return InterResult(g, d, curves)


def _disc(bench: BenchmarkConfig, d: ParameterSet, probs, logits):
    return forward_discriminator(bench.discriminator, d,
                                 discriminator_input(bench.discriminator, probs, logits))


def predict(bench: BenchmarkConfig, g: ParameterSet, images: np.ndarray) -> np.ndarray:
    """Soft predictions for a stack of inputs, computed without a graph."""
    out = []
    with ad.no_grad():
        for lo in range(0, len(images), bench.eval_batch):
            _, p = _g_forward(bench.generator, g, images[lo:lo + bench.eval_batch])
            out.append(p.data)
    return np.concatenate(out, axis=0)


@dataclass
class RankingArtifacts:
    records: list[RankRecord]
    assignment: SplitAssignment
    pseudo_labels: dict[str, np.ndarray]
    entropy_scores: np.ndarray


def rank_probmaps(bench: BenchmarkConfig, ids: Sequence[str], probs: np.ndarray) -> list[RankRecord]:
    """Ranking records from soft predictions (batched, class axis 1)."""
    with ad.no_grad():
        ent = losses.entropy_map(ad.Tensor(probs)).data
    preds = to_pseudo_label(probs)
    rare = bench.rare
    return [make_record(k, ent[i], preds[i], rare) for i, k in enumerate(ids)]


def generate_ranking_artifacts(bench: BenchmarkConfig, g_inter: ParameterSet, target: Dataset,
                               lam: float | None = None,
                               use_normalized: bool | None = None) -> RankingArtifacts:
    """Stage 2: entropy ranking, easy/hard split and pseudo labels for the easy split."""
    lam = bench.stage.lam if lam is None else lam
    use_normalized = bench.stage.use_normalized_ranking if use_normalized is None else use_normalized
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    probs = predict(bench, g_inter, target.images)
    records = rank_probmaps(bench, target.ids, probs)
    assignment = split(records, lam, use_normalized)
    index = target.index()
    pseudo = {k: to_pseudo_label(probs[index[k]]) for k in assignment.easy}
    scores = np.array([r.score for r in records])
    return RankingArtifacts(records, assignment, pseudo, scores)


def train_intra(bench: BenchmarkConfig, g_inter: ParameterSet, target: Dataset,
                artifacts: RankingArtifacts, seed: int, pseudo_weight: float | None = None,
                adv_weight: float | None = None) -> InterResult:
    """Stage 3: self-training on the easy split plus easy-vs-hard entropy alignment.

    Only target images and pseudo labels are used; target ground truth is
    never touched.
    """
    st, gcfg = bench.stage, bench.generator
    pw = st.pseudo_weight if pseudo_weight is None else pseudo_weight
    aw = st.intra_weight if adv_weight is None else adv_weight
    easy, hard = artifacts.assignment.easy, artifacts.assignment.hard
    g = g_inter.copy() if st.init_intra_from_inter else init_generator(gcfg, seed + 104729)
    if not easy:
        log.warning("easy split is empty; intra-domain stage skipped")
        return InterResult(g_inter.copy(), None, {})
    adversarial = bool(hard) and aw > 0
    if not adversarial and pw == 0:
        log.warning("intra-domain stage has no active loss; skipped")
        return InterResult(g_inter.copy(), None, {})
    index = target.index()
    easy_idx = np.array([index[k] for k in easy])
    hard_idx = np.array([index[k] for k in hard], dtype=np.int64)
    easy_labels = np.stack([artifacts.pseudo_labels[k] for k in easy])
    d = init_discriminator(bench.discriminator, seed + 15485863) if adversarial else None
    e_rng, h_rng = _rng(seed, _EASY_STREAM), _rng(seed, _HARD_STREAM)
    seg_c, adv_c, d_c = (_Curve(st.curve_window) for _ in range(3))
    for it in range(st.intra_iterations):
        f = st.decay(it, st.intra_iterations)
        ei = e_rng.integers(0, len(easy_idx), st.batch_size)
        logits_e, p_e = _g_forward(gcfg, g, target.images[easy_idx[ei]])
        seg = losses.seg_cross_entropy(p_e, easy_labels[ei], st.seg_reduction)
        loss = ad.mul(seg, pw) if pw != 1.0 else seg
        if adversarial:
            hi = h_rng.integers(0, len(hard_idx), st.batch_size)
            logits_h, p_h = _g_forward(gcfg, g, target.images[hard_idx[hi]])
            adv = losses.generator_adv_loss(_disc(bench, d, p_h, logits_h), st.adv_reduction)
            loss = losses.total_generator_objective(loss, adv, aw)
            adv_c.add(adv.item())
        ad.backward(loss)
        ad.sgd_step(g, st.g_lr * f, st.g_momentum, st.g_weight_decay)
        seg_c.add(seg.item())
        if adversarial:
            d.zero_grad()
            d_loss = losses.split_discriminator_loss(
                _disc(bench, d, p_e.detach(), logits_e.detach()),
                _disc(bench, d, p_h.detach(), logits_h.detach()), st.adv_reduction)
            ad.backward(d_loss)
            ad.adam_step(d, st.d_lr * f)
            d_c.add(d_loss.item())
    curves = {"seg": seg_c.values()}
    if adversarial:
        curves.update(adv=adv_c.values(), disc=d_c.values())
    return InterResult(g, d, curves)


# --------------------------------------------------------------------------
# evaluation


def evaluate(bench: BenchmarkConfig, g: ParameterSet, data: Dataset) -> float:
    """mIoU (segmentation) or accuracy (classification) on a labelled eval split."""
    gt = data.evaluation_labels()
    pred = to_pseudo_label(predict(bench, g, data.images))
    cm = ConfusionMatrix(bench.generator.num_classes).accumulate(pred, gt)
    return cm.accuracy() if bench.task == CLASSIFICATION else iou(cm).miou


def confusion_of(bench: BenchmarkConfig, g: ParameterSet, data: Dataset) -> ConfusionMatrix:
    pred = to_pseudo_label(predict(bench, g, data.images))
    return ConfusionMatrix(bench.generator.num_classes).accumulate(pred, data.evaluation_labels())


def spearman(a, b) -> float:
    return float(stats.spearmanr(a, b).statistic)


# --------------------------------------------------------------------------
# experiments

VARIANTS = ("source_only", "inter_only", "self_training_only", "adv_only", "full")


@dataclass
class SeedRun:
    seed: int
    metrics: dict[str, float]
    extra_lambdas: dict[str, float]
    spearman_difficulty: float
    curves: dict[str, dict[str, list[float]]]
    easy_count: int
    # wall-clock seconds for the five variants and for extra lambdas; kept out
    # of results.json so that the file stays byte-reproducible
    timings: dict[str, float] = field(default_factory=dict, compare=False)


def run_seed(bench: BenchmarkConfig, seed: int, lambdas: Sequence[float] = (),
             out_dir: Path | None = None) -> SeedRun:
    """All pipeline variants for one seed; stage-1 models are shared by the variants."""
    t0 = time.perf_counter()
    source, target, target_eval = make_datasets(bench, seed)
    st = bench.stage
    src_only = train_inter(bench, source, target, seed, adversarial=False)
    inter = train_inter(bench, source, target, seed, adversarial=True)
    metrics = {"source_only": evaluate(bench, src_only.generator, target_eval),
               "inter_only": evaluate(bench, inter.generator, target_eval)}
    curves = {"source_only": src_only.curves, "inter": inter.curves}

    art = generate_ranking_artifacts(bench, inter.generator, target)
    rho = spearman(target.hidden_difficulty(), art.entropy_scores)

    full = train_intra(bench, inter.generator, target, art, seed)
    metrics["full"] = evaluate(bench, full.generator, target_eval)
    curves["full"] = full.curves
    adv_only = train_intra(bench, inter.generator, target, art, seed, pseudo_weight=0.0)
    metrics["adv_only"] = evaluate(bench, adv_only.generator, target_eval)
    curves["adv_only"] = adv_only.curves
    art_all = generate_ranking_artifacts(bench, inter.generator, target, lam=1.0)
    st_only = train_intra(bench, inter.generator, target, art_all, seed)
    metrics["self_training_only"] = evaluate(bench, st_only.generator, target_eval)
    curves["self_training_only"] = st_only.curves

    # reuse runs whose lambda coincides with one already trained
    known = {0.0: metrics["inter_only"], float(st.lam): metrics["full"],
             1.0: metrics["self_training_only"]}
    t1 = time.perf_counter()
    extra = {}
    for lam in lambdas:
        lam = float(lam)
        if lam not in known:
            art_l = generate_ranking_artifacts(bench, inter.generator, target, lam=lam)
            res = train_intra(bench, inter.generator, target, art_l, seed)
            known[lam] = evaluate(bench, res.generator, target_eval)
        extra[_lam_key(lam)] = known[lam]

    timings = {"variants": t1 - t0, "extra_lambdas": time.perf_counter() - t1}
    if out_dir is not None:
        _persist_seed(bench, seed, out_dir, src_only, inter, full, art, target)
    return SeedRun(seed, metrics, extra, rho, curves, len(art.assignment.easy), timings)


def _lam_key(lam: float) -> str:
    return repr(float(lam))


def _persist_seed(bench, seed, out_dir: Path, src_only, inter, full, art, target) -> None:
    out = Path(out_dir)
    cfg = bench.to_dict()
    ck = out / "checkpoints" / f"seed{seed}"
    save_checkpoint(ck / "g_source_only", src_only.generator, cfg["generator"], seed)
    save_checkpoint(ck / "g_inter", inter.generator, cfg["generator"], seed)
    save_checkpoint(ck / "d_inter", inter.discriminator, cfg["discriminator"], seed)
    save_checkpoint(ck / "g_intra", full.generator, cfg["generator"], seed)
    if full.discriminator is not None:
        save_checkpoint(ck / "d_intra", full.discriminator, cfg["discriminator"], seed)
    name = "ranking.csv" if seed == 0 else f"ranking_seed{seed}.csv"
    write_ranking_csv(out / name, art.records, art.assignment, bench.stage.use_normalized_ranking)
    pdir = out / "pseudo" / f"seed{seed}"
    pdir.mkdir(parents=True, exist_ok=True)
    for k, lab in art.pseudo_labels.items():
        write_tensor(pdir / f"{k}.tnsr", lab.astype(np.int32))


def _summary(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}


@dataclass
class ExperimentResult:
    seeds: list[int]
    runs: list[SeedRun]
    config: dict

    def per_variant(self, name: str) -> list[float]:
        return [r.metrics[name] for r in self.runs]

    def mean(self, name: str) -> float:
        return float(np.mean(self.per_variant(name)))

    def std(self, name: str) -> float:
        return float(np.std(self.per_variant(name)))

    def lambda_table(self) -> list[tuple[float, float, float]]:
        """``(lambda, mean, std)`` rows over the requested ablation grid."""
        keys = sorted({k for r in self.runs for k in r.extra_lambdas}, key=float)
        return [(float(k), *_summary([r.extra_lambdas[k] for r in self.runs]).values())
                for k in keys]

    def to_dict(self) -> dict:
        metric = "accuracy" if self.config.get("task") == CLASSIFICATION else "miou"
        return {
            "metric": metric,
            "seeds": self.seeds,
            "summary": {v: _summary(self.per_variant(v)) for v in VARIANTS},
            "per_seed": [{"seed": r.seed, **{f"{metric}_{v}": r.metrics[v] for v in VARIANTS},
                          "spearman_difficulty_vs_rank": r.spearman_difficulty,
                          "easy_count": r.easy_count,
                          "lambda_ablation": r.extra_lambdas} for r in self.runs],
            "loss_curves": {str(r.seed): r.curves for r in self.runs},
            "split_manifest": "ranking.csv",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _run_seed_job(args):
    bench_dict, seed, lambdas, out_dir = args
    return run_seed(BenchmarkConfig.from_dict(bench_dict), seed, lambdas, out_dir)


def run_experiment(bench: BenchmarkConfig, seeds: Sequence[int], lambdas: Sequence[float] = (),
                   out_dir=None, jobs: int = 1) -> ExperimentResult:
    """Every variant for every seed; optional ``lambdas`` adds ablation rows."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    for lam in lambdas:
        if not 0.0 <= float(lam) <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    out = Path(out_dir) if out_dir is not None else None
    jobs_args = [(bench.to_dict(), s, list(lambdas), out) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_seed_job, jobs_args))
    else:
        runs = [run_seed(bench, s, lambdas, out) for s in seeds]
    result = ExperimentResult(seeds, runs, bench.to_dict())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(bench.to_dict(), indent=2, sort_keys=True))
        (out / "results.json").write_text(result.to_json())
    return result


def ablation_csv(result: ExperimentResult) -> str:
    lines = ["lambda,mean_metric,std_metric,seeds"]
    for lam, mean, std in result.lambda_table():
        lines.append(f"{lam:g},{mean:.6f},{std:.6f},{len(result.runs)}")
    return "\n".join(lines) + "\n"


def run_lambda_ablation(bench: BenchmarkConfig, lambdas: Sequence[float], seeds: Sequence[int],
                        out_dir=None, jobs: int = 1) -> ExperimentResult:
    result = run_experiment(bench, seeds, lambdas, out_dir, jobs)
    if out_dir is not None:
        (Path(out_dir) / "ablation.csv").write_text(ablation_csv(result))
    return result
