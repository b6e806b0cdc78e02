"""Acceptance suite: one test per criterion, each also logging a PASS/FAIL line.

The long-running criteria (5-8) share a single five-seed run of the default
segmentation benchmark with the lambda grid {0, 0.5, 0.67, 1}.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from twostepda import losses, models, pipeline
from twostepda.gradcheck import check_params
from twostepda.metrics import ConfusionMatrix, iou
from twostepda.models import DiscriminatorConfig, GeneratorConfig
from twostepda.ranking import RankRecord, RareClassSet, make_record, order, split
from twostepda.tensorio import load_checkpoint, read_tensor, save_checkpoint, write_tensor

SEEDS = [0, 1, 2, 3, 4]
LAMBDAS = [0.0, 0.5, 0.67, 1.0]
VARIANT_BUDGET_S = 30 * 60
ABLATION_BUDGET_S = 45 * 60
CLASSIFICATION_BUDGET_S = 5 * 60


def verdict(log, number, ok, detail):
    log.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("experiment")
    t0 = time.perf_counter()
    result = pipeline.run_lambda_ablation(pipeline.segmentation_benchmark(), LAMBDAS, SEEDS, out)
    return result, out, time.perf_counter() - t0


# 1 ------------------------------------------------------------------------


def test_criterion_01_entropy_oracle(acceptance_log):
    uniform = np.full((19, 8, 8), 1 / 19, dtype=np.float32)
    ent = losses.entropy_map(uniform).data
    onehot = losses.one_hot(np.random.default_rng(0).integers(0, 19, (8, 8)), 19, axis=0)
    ent1 = losses.entropy_map(onehot).data
    err_u = float(np.abs(ent - math.log(19)).max())
    err_1 = float(np.abs(ent1).max())
    verdict(acceptance_log, 1, err_u < 1e-5 and err_1 < 1e-5,
            f"uniform max|H - ln 19| = {err_u:.2e}, one-hot max|H| = {err_1:.2e}")


# 2 ------------------------------------------------------------------------


def _nets():
    gcfg = GeneratorConfig(num_classes=3, widths=[4])
    dcfg = DiscriminatorConfig(widths=[3], num_classes=3)
    return gcfg, dcfg, models.init_generator(gcfg, 1), models.init_discriminator(dcfg, 2)


def test_criterion_02_gradient_correctness(acceptance_log, f64):
    rng = np.random.default_rng(0)
    gcfg, dcfg, g, d = _nets()
    xs, xt = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    ys = rng.integers(0, 3, size=(2, 4, 4))

    def maps(x):
        p = models.forward_generator(gcfg, g, x)
        return p, models.forward_discriminator(dcfg, d, models.discriminator_input(dcfg, p))

    def seg():
        return losses.seg_cross_entropy(maps(xs)[0], ys)

    def disc():
        return losses.domain_discriminator_loss(maps(xs)[1], maps(xt)[1])

    def gen_adv():
        return losses.generator_adv_loss(maps(xt)[1])

    def pseudo_seg():
        p = maps(xt)[0]
        return losses.seg_cross_entropy(p, np.argmax(p.data, axis=1))

    def split_disc():
        return losses.split_discriminator_loss(maps(xs)[1], maps(xt)[1])

    def total():
        p_s, _ = maps(xs)
        _, d_t = maps(xt)
        return losses.total_generator_objective(
            losses.seg_cross_entropy(p_s, ys), losses.generator_adv_loss(d_t), 0.5)

    worst = []
    for name, fn in [("seg", seg), ("disc", disc), ("gen_adv", gen_adv), ("pseudo_seg", pseudo_seg),
                     ("split_disc", split_disc), ("total", total)]:
        res = check_params(fn, [g, d], h=1e-6)
        worst.append((name, res.fraction_below(1e-3), res.max_error))
    ok = all(frac >= 0.95 and mx < 1e-2 for _, frac, mx in worst)
    verdict(acceptance_log, 2, ok,
            "; ".join(f"{n}: {frac:.1%} < 1e-3, max {mx:.1e}" for n, frac, mx in worst))


# 3 ------------------------------------------------------------------------


def test_criterion_03_split_contract(acceptance_log):
    n = 2975
    rng = np.random.default_rng(3)
    recs = [RankRecord(f"img{i:04d}", s, s, 0) for i, s in enumerate(rng.random(n))]
    counts = {lam: len(split(recs, lam).easy) for lam in (0.0, 0.5, 0.6, 0.67, 0.7, 1.0)}
    # exact rational arithmetic, halves rounded up (0.7 * 2975 is exactly 2082.5)
    expected = {lam: math.floor(Fraction(str(lam)) * n + Fraction(1, 2)) for lam in counts}
    ok = counts == expected and counts[0.67] == 1993
    for trial in range(100):
        m = int(rng.integers(1, 300))
        scores = rng.exponential(size=m) if trial % 2 else rng.integers(0, 5, size=m).astype(float)
        rs = [RankRecord(f"r{i}", s, s, 0) for i, s in enumerate(scores)]
        lams = np.sort(rng.random(4))
        easy = [set(split(rs, lam).easy) for lam in lams]
        ok &= all(a <= b for a, b in zip(easy, easy[1:]))
        c = float(rng.uniform(0.1, 10))
        scaled = [RankRecord(r.image_id, r.score * c, r.normalized_score * c, 0) for r in rs]
        ok &= split(scaled, lams[1]).easy == split(rs, lams[1]).easy
    verdict(acceptance_log, 3, ok, f"|easy| per lambda = {counts}; monotone and scale-invariant x100")


# 4 ------------------------------------------------------------------------


def _set_oracle(pred, gt, c):
    vals = []
    for k in range(c):
        p = {(i, j) for i, j in zip(*np.nonzero(pred == k))}
        g = {(i, j) for i, j in zip(*np.nonzero(gt == k))}
        if p | g:
            vals.append(len(p & g) / len(p | g))
    return vals


def test_criterion_04_iou_oracle(acceptance_log):
    rng = np.random.default_rng(4)
    mismatches = 0
    for t in range(1000):
        c = (2, 3, 5)[t % 3]
        pred, gt = rng.integers(0, c, (4, 4)), rng.integers(0, c, (4, 4))
        res = iou(ConfusionMatrix(c).accumulate(pred, gt))
        oracle = _set_oracle(pred, gt, c)
        mismatches += [v for v in res.per_class if v is not None] != oracle
        mismatches += res.miou != math.fsum(oracle) / len(oracle)
    verdict(acceptance_log, 4, mismatches == 0, f"{mismatches} mismatches over 1000 pairs")


# 5-8 ----------------------------------------------------------------------


def test_criterion_05_adaptation_ordering(acceptance_log, experiment):
    result, _, _ = experiment
    src, inter, full = (np.array(result.per_variant(v)) for v in ("source_only", "inter_only", "full"))
    runtime = sum(r.timings["variants"] for r in result.runs)
    full_wins = int((full > inter).sum())
    inter_wins = int((inter > src).sum())
    ok = (full.mean() > inter.mean() and full_wins >= 4 and inter_wins >= 4
          and runtime <= VARIANT_BUDGET_S)
    verdict(acceptance_log, 5, ok,
            f"mIoU source {src.mean():.4f}, inter {inter.mean():.4f}, full {full.mean():.4f}; "
            f"full>inter {full_wins}/5, inter>source {inter_wins}/5; {runtime / 60:.1f} min")


def test_criterion_06_decomposition(acceptance_log, experiment):
    result, _, _ = experiment
    inter, full = result.mean("inter_only"), result.mean("full")
    parts, ok = [], True
    for v in ("self_training_only", "adv_only"):
        m, s = result.mean(v), result.std(v)
        inside = min(inter, full) - s <= m <= max(inter, full) + s
        ok &= inside
        parts.append(f"{v} {m:.4f} +- {s:.4f}")
    verdict(acceptance_log, 6, ok, f"inter {inter:.4f}, full {full:.4f}; " + ", ".join(parts))


def test_criterion_07_lambda_ablation(acceptance_log, experiment):
    result, out, elapsed = experiment
    lines = (out / "ablation.csv").read_text().splitlines()
    table = {float(ln.split(",")[0]): float(ln.split(",")[1]) for ln in lines[1:]}
    zero_exact = all(r.extra_lambdas[repr(0.0)] == r.metrics["inter_only"] for r in result.runs)
    ends = max(table[0.0], table[1.0])
    best_inner = max(v for k, v in table.items() if 0 < k < 1)
    ok = (lines[0] == "lambda,mean_metric,std_metric,seeds" and sorted(table) == LAMBDAS
          and zero_exact and best_inner >= ends and elapsed <= ABLATION_BUDGET_S)
    verdict(acceptance_log, 7, ok,
            f"means {table}; lambda=0 equals inter-only: {zero_exact}; {elapsed / 60:.1f} min")


def test_criterion_08_ranking_premise(acceptance_log, experiment):
    result, _, _ = experiment
    n = pipeline.segmentation_benchmark().target_train.count
    rhos = [r.spearman_difficulty for r in result.runs]
    ok = n >= 200 and min(rhos) > 0.3
    verdict(acceptance_log, 8, ok, f"{n} images; Spearman per seed {[round(v, 3) for v in rhos]}")


# 9 ------------------------------------------------------------------------


def test_criterion_09_normalization(acceptance_log):
    rare = RareClassSet.cityscapes()
    rng = np.random.default_rng(9)
    ent = rng.uniform(0, 2, (16, 16))
    ok = True
    for k in range(1, 6):
        pred = np.zeros((16, 16), dtype=np.int64)
        for j, c in enumerate(sorted(rare.classes)[:k]):
            pred[j, :] = c
        rec = make_record("x", ent, pred, rare)
        ok &= rec.rare_class_count == k and rec.normalized_score == rec.score / k
    p1, p3 = np.zeros((16, 16), int), np.zeros((16, 16), int)
    p1[0] = 3
    p3[0], p3[1], p3[2] = 3, 4, 5
    a, b = make_record("a_k1", ent, p1, rare), make_record("b_k3", ent, p3, rare)
    ok &= [r.image_id for r in order([a, b], use_normalized=True)] == ["b_k3", "a_k1"]
    verdict(acceptance_log, 9, ok, "normalized = score / k for k = 1..5; higher k ranks easier")


# 10 -----------------------------------------------------------------------


def test_criterion_10_classification_track(acceptance_log):
    bench = pipeline.classification_benchmark()
    t0 = time.perf_counter()
    result = pipeline.run_experiment(bench, SEEDS)
    elapsed = time.perf_counter() - t0
    gain = result.mean("full") - result.mean("source_only")
    ok = bench.stage.lam == 0.8 and gain >= 0.02 and elapsed <= CLASSIFICATION_BUDGET_S
    verdict(acceptance_log, 10, ok,
            f"accuracy source {result.mean('source_only'):.4f}, full {result.mean('full'):.4f} "
            f"(+{100 * gain:.1f} points); {elapsed / 60:.1f} min")


# 11 -----------------------------------------------------------------------


def test_criterion_11_determinism_and_round_trips(acceptance_log, tmp_path):
    bench = pipeline.segmentation_benchmark().with_stage(inter_iterations=40, intra_iterations=40)
    pipeline.run_experiment(bench, [0, 1], [0.5], tmp_path / "a")
    pipeline.run_experiment(bench, [0, 1], [0.5], tmp_path / "b")
    same_json = (tmp_path / "a" / "results.json").read_bytes() == (tmp_path / "b" / "results.json").read_bytes()

    rng = np.random.default_rng(11)
    arrays = [rng.normal(size=(2, 3)).astype(np.float32), rng.integers(-9, 9, (4, 5, 6)).astype(np.int32),
              np.array(np.float32(np.pi)), np.zeros((0, 3), np.float32)]
    tensors_ok = True
    for i, arr in enumerate(arrays):
        write_tensor(tmp_path / f"t{i}.tnsr", arr)
        back = read_tensor(tmp_path / f"t{i}.tnsr")
        tensors_ok &= back.dtype == arr.dtype and back.shape == arr.shape and back.tobytes() == arr.tobytes()

    g, _ = load_checkpoint(tmp_path / "a" / "checkpoints" / "seed0" / "g_intra")
    save_checkpoint(tmp_path / "copy", g, bench.to_dict()["generator"], 0)
    g2, manifest = load_checkpoint(tmp_path / "copy")
    ckpt_ok = all(g2[k].data.tobytes() == t.data.tobytes() for k, t in g.items())
    x = pipeline.make_datasets(bench, 0)[2].images[:4]
    ckpt_ok &= pipeline.predict(bench, g, x).tobytes() == pipeline.predict(bench, g2, x).tobytes()
    ok = same_json and tensors_ok and ckpt_ok
    verdict(acceptance_log, 11, ok,
            f"results.json identical: {same_json}; tensor round-trip: {tensors_ok}; checkpoint: {ckpt_ok}")
