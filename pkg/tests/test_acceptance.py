"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (collected and printed in the terminal
summary by conftest.py) before asserting, so a full run lists every
criterion even when some fail.

Criteria 9 and 10 need the public UCI alcoholism corpus: point OMAD_UCI_DIR
at a directory of `.rd` trial files. Without it they fail. Criteria 11-14
run on the UCI corpus when present and on the synthetic stand-in otherwise.
"""

import math
import os
import time

import numpy as np
import pytest

from omad import dsp, featsel, nn, prune
from omad.config import PipelineConfig
from omad.dataset import parse_rd
from omad.evaluate import bench_batch, latency_bench
from omad.pipeline import (
    Setting,
    compression_pair,
    load_artifacts,
    load_main,
    main_features,
    main_windows,
    prune_finetune,
    run_setting,
    run_sweep,
    tag_windows,
    train_detector,
    trial_split,
)

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
UCI_DIR = os.environ.get("OMAD_UCI_DIR")
LINES: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    LINES.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def base_config() -> PipelineConfig:
    cfg = PipelineConfig()
    return cfg.override("data.main_dir", UCI_DIR) if UCI_DIR else cfg


CORPUS = "UCI" if UCI_DIR else "synthetic"


# --------------------------------------------------------------------------
# property-based criteria 1-8


def _numeric_rel_error(net, x, labels, seed, samples=10, eps=1e-5):
    onehot = nn.one_hot(labels, 2, dtype=np.float64)
    _, cache = net.forward(x, "train", np.random.default_rng(seed))
    grads = net.backward(cache, onehot)
    pick = np.random.default_rng(seed + 1)
    worst = 0.0

    def loss():
        p, _ = net.forward(x, "train", np.random.default_rng(seed))
        return nn.cross_entropy(p, onehot)

    for i, layer in enumerate(net.layers):
        if not layer.weighted:
            continue
        for name, arr in layer.params().items():
            flat = arr.reshape(-1)
            for j in pick.choice(flat.size, min(samples, flat.size), replace=False):
                old = flat[j]
                flat[j] = old + eps
                up = loss()
                flat[j] = old - eps
                down = loss()
                flat[j] = old
                num = (up - down) / (2 * eps)
                ana = grads[i][name].reshape(-1)[j]
                worst = max(worst, abs(num - ana) / max(1e-6, abs(num) + abs(ana)))
    return worst


def _jitter_biases(net, seed):
    # keeps ReLU pre-activations away from the kink at exactly 0
    for layer in net.weighted_layers():
        layer.b[:] = np.random.default_rng(seed).normal(0, 0.1, layer.b.shape)


def test_c01_gradient_correctness():
    start = time.perf_counter()
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cases = {
            "dense+softmax/CE": (nn.build(nn.mlp_specs(6, (7,)), (6,), seed, np.float64), rng.normal(size=(5, 6))),
            "dropout-off": (nn.build(nn.mlp_specs(6, (7, 5), dropout=0.0), (6,), seed, np.float64),
                            rng.normal(size=(5, 6))),
            "dropout-on": (nn.build(nn.mlp_specs(6, (7, 5), dropout=0.3), (6,), seed, np.float64),
                           rng.normal(size=(5, 6))),
            "conv1d": (nn.cnn(3, 8, seed, conv=(4, 3), hidden=5).astype(np.float64), rng.normal(size=(4, 3, 8))),
        }
        for kind, (net, x) in cases.items():
            _jitter_biases(net, seed + 7)
            err = _numeric_rel_error(net, x, rng.integers(0, 2, len(x)), seed)
            worst[kind] = max(worst.get(kind, 0.0), err)
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(1, ok, f"max rel error over 20 seeds: {detail} (< 1e-4); {elapsed:.1f}s (< 60s)")


def test_c02_mask_exactness():
    bad = []
    for n in (10, 100, 4097):
        for s in (0.0, 0.25, 0.5, 0.9):
            for seed in range(5):
                w = np.random.default_rng(seed).normal(size=n) * np.random.default_rng(seed + 9).uniform(0.1, 10)
                if compute_zeros(w, s) != math.floor(s * n):
                    bad.append((n, s, seed))
    record(2, not bad, f"zeros(mask) == floor(s*n) on 60 fixtures; mismatches: {bad or 'none'}")


def compute_zeros(w, s):
    return int(np.sum(prune.compute_mask(w, s).mask == 0))


def test_c03_sparse_dense_equivalence():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        if seed % 2:
            net = nn.cnn(int(rng.integers(1, 5)), int(rng.integers(4, 20)), seed,
                         conv=tuple(int(v) for v in rng.integers(1, 8, 2)), hidden=int(rng.integers(2, 16)))
        else:
            hidden = tuple(int(v) for v in rng.integers(2, 40, rng.integers(1, 4)))
            d = int(rng.integers(2, 50))
            net = nn.build(nn.mlp_specs(d, hidden, dropout=0.2), (d,), seed)
        net = prune.prune_to(net, float(rng.choice([0.0, 0.25, 0.5, 0.9])))
        x = rng.normal(size=(int(rng.integers(1, 70)),) + net.input_shape).astype(np.float32)
        worst = max(worst, float(np.abs(prune.sparse_forward(net, x) - net.forward(x)[0]).max()))
    record(3, worst <= 1e-6, f"max |sparse - dense| over 50 nets = {worst:.2e} (<= 1e-6)")


def test_c04_pruned_weights_stay_zero():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(640, 10)).astype(np.float32)
    y = (x[:, 0] - x[:, 3] > 0).astype(int)
    net = nn.build(nn.mlp_specs(10, (32, 16)), (10,), 0)
    steps_per_epoch = 10  # 640 rows / batch 64
    sched = prune.PruningSchedule(0.0, 0.5, 0, 100, 10)
    opt = nn.Adam()
    cb = prune.PruningCallback(sched, opt)
    epochs = (sched.end_step + 500) // steps_per_epoch + 1
    nn.train(net, x, y, nn.TrainConfig(epochs, batch_size=64, dropout=0.0, seed=0), [cb], optimizer=opt)
    total_steps = epochs * steps_per_epoch
    leaked = sum(int(np.count_nonzero(layer.W[layer.mask == 0])) for layer in net.weighted_layers())
    ok = leaked == 0 and total_steps - sched.end_step >= 500
    record(4, ok, f"{total_steps - sched.end_step} steps after end_step, {leaked} masked weights non-zero")


def test_c05_serialization():
    rng = np.random.default_rng(0)
    net = nn.build([nn.LayerSpec(nn.LayerKind.DENSE, (100, 100)), nn.LayerSpec(nn.LayerKind.SOFTMAX)], (100,), 0)
    net = prune.prune_to(net, 0.5)
    sparse = prune.sparse_payload_bytes(10_000, 5_000)
    dense = prune.dense_payload_bytes(10_000)
    exact = True
    for enc in ("dense", "sparse", "auto"):
        back = prune.from_bytes(prune.to_bytes(net, enc))
        for a, b in zip(net.weighted_layers(), back.weighted_layers()):
            exact &= a.W.tobytes() == b.W.tobytes() and a.b.tobytes() == b.b.tobytes()
            exact &= np.array_equal(a.mask, b.mask)
    x = rng.normal(size=(3, 100)).astype(np.float32)
    exact &= np.array_equal(prune.from_bytes(prune.to_bytes(net)).forward(x)[0], net.forward(x)[0])
    file_gap = len(prune.to_bytes(net, "dense")) - len(prune.to_bytes(net, "sparse"))
    ok = exact and sparse == 21_250 and dense == 40_000 and file_gap == dense - sparse
    record(5, ok, f"bit-exact round trip: {exact}; payload sparse {sparse} vs dense {dense} B "
                  f"({1 - sparse / dense:.1%} reduction)")


def test_c06_windowing_and_rd_golden(table_i_text):
    count = dsp.WindowConfig(128, 0.8).count(1280)
    rec = parse_rd(table_i_text)
    fields = (rec.subject_id, rec.group.value, rec.condition.value, rec.trial_number, rec.declared_samples,
              rec.sample_period_ms, rec.channels, rec.data[0].tolist())
    expected = ("co2a0000364", "Alcoholic", "S1 obj", 0, 416, 3.906, ("FP1",), [-8.921, -8.433, -2.574, 5.239])
    ok = count == 47 and fields == expected
    record(6, ok, f"windows(1280, 128, 0.8) = {count} (47); parsed {fields[:6]}")


def test_c07_schedule():
    sched = prune.PruningSchedule(0.0, 0.5, 0, 100, 10)
    a, mid, b = (prune.sparsity_at(t, sched) for t in (0, 50, 100))
    ok = a == 0.0 and b == 0.5 and abs(mid - 0.4375) < 1e-12
    record(7, ok, f"sparsity_at(0, 50, 100) = {a}, {mid}, {b} (0, 0.4375, 0.5)")


def test_c08_feature_selection():
    stats = pytest.importorskip("scipy.stats")
    a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
    t, p, df = featsel.welch_t_df(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False).pvalue
    rng = np.random.default_rng(0)
    col = rng.normal(size=40)
    y = np.repeat([0, 1], 20)
    x = np.column_stack([col + y, col + y, rng.normal(size=40)])
    dup = featsel.select_features(x, y, 0.9, 1.0, names=["A", "A2", "noise"])
    ok = t == -1.0 and df == 8.0 and abs(p - ref) < 1e-9 and 0 in dup.kept_indices and dup.dropped_by_correlation == [1]
    record(8, ok, f"welch t={t}, df={df}, p={p:.4f} (reference {ref:.4f}); duplicate pair: kept "
                  f"{dup.kept_names()}, dropped by correlation {dup.dropped_by_correlation}")


# --------------------------------------------------------------------------
# quantitative criteria 9-15


@pytest.fixture(scope="module")
def settings_runs():
    """Setting 1-3 reports per seed on the UCI corpus, or None when it is absent."""
    if not UCI_DIR:
        return None
    cfg = base_config()
    start = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        recs, _ = load_main(cfg, seed)
        mw = main_windows(recs, cfg)
        feats = main_features(mw)
        test = trial_split(mw, cfg, seed)
        det = train_detector(load_artifacts(cfg, seed), cfg, seed)
        tags = tag_windows(det.net, det.prep, recs, mw, cfg)
        for setting in Setting:
            for r in run_setting(setting, mw, feats, test, cfg, seed, tags=tags):
                runs[(setting, r.model, seed)] = r.accuracy
    return runs, time.perf_counter() - start


def _mean(runs, setting, model):
    return float(np.mean([runs[(setting, model, s)] for s in SEEDS]))


def test_c09_setting2_accuracy_band(settings_runs):
    if settings_runs is None:
        record(9, False, "UCI corpus not available (set OMAD_UCI_DIR)")
    runs, elapsed = settings_runs
    targets = {"MLP7": 0.8488, "RF": 0.7887, "SVM": 0.7120}
    got = {m: _mean(runs, Setting.ALL_WITH_REMOVAL, m) for m in targets}
    ok = all(abs(got[m] - targets[m]) <= 0.06 for m in targets) and elapsed < 1800
    detail = ", ".join(f"{m} {got[m]:.2%} (target {targets[m]:.2%} +/- 6)" for m in targets)
    record(9, ok, f"setting 2 mean over 3 seeds: {detail}; {elapsed / 60:.1f} min (< 30)")


def test_c10_setting_ordering(settings_runs):
    if settings_runs is None:
        record(10, False, "UCI corpus not available (set OMAD_UCI_DIR)")
    runs, _ = settings_runs
    mlp1, mlp2 = (_mean(runs, s, "MLP7") for s in (Setting.ALL_NO_REMOVAL, Setting.ALL_WITH_REMOVAL))
    rf1, rf3 = (_mean(runs, s, "RF") for s in (Setting.ALL_NO_REMOVAL, Setting.SELECTED_WITH_REMOVAL))
    ok = mlp2 >= mlp1 and rf3 >= rf1
    record(10, ok, f"MLP7 setting 2 {mlp2:.2%} >= setting 1 {mlp1:.2%}; RF setting 3 {rf3:.2%} >= setting 1 {rf1:.2%}")


@pytest.fixture(scope="module")
def main_corpus():
    cfg = base_config()
    out = {}
    for seed in SEEDS:
        recs, _ = load_main(cfg, seed)
        mw = main_windows(recs, cfg)
        out[seed] = (mw, trial_split(mw, cfg, seed))
    return cfg, out


@pytest.fixture(scope="module")
def compression_runs(main_corpus):
    cfg, corpora = main_corpus
    runs = {}
    for kind in ("mlp", "cnn"):
        for seed in SEEDS:
            mw, test = corpora[seed]
            runs[(kind, seed)] = compression_pair(kind, mw, test, cfg, seed)
    return runs


def test_c11_pruning_accuracy_cost(compression_runs):
    drops = {}
    for kind in ("mlp", "cnn"):
        drops[kind] = float(np.mean([compression_runs[(kind, s)][0][0].accuracy
                                     - compression_runs[(kind, s)][0][1].accuracy for s in SEEDS]))
    ok = all(d <= 0.03 for d in drops.values())
    record(11, ok, f"[{CORPUS}] mean accuracy drop at 50% over 3 seeds: "
                   f"MLP7 {drops['mlp'] * 100:.2f} pts, CNN {drops['cnn'] * 100:.2f} pts (<= 3)")


def test_c12_size_reduction(compression_runs):
    red = {}
    for kind in ("mlp", "cnn"):
        dense, pruned = compression_runs[(kind, 0)][0]
        red[kind] = (dense.model_size_bytes, pruned.model_size_bytes,
                     1 - pruned.model_size_bytes / dense.model_size_bytes)
    ok = all(p < d and r >= 0.35 for d, p, r in red.values())
    detail = "; ".join(f"{k.upper()} {d} -> {p} B ({r:.1%})" for k, (d, p, r) in red.items())
    record(12, ok, f"{detail} (>= 35% each)")


def test_c13_latency_direction(compression_runs, main_corpus):
    cfg, corpora = main_corpus
    mw, test = corpora[0]
    (_, _), tm, pruned50 = compression_runs[("mlp", 0)]
    pruned90 = prune_finetune(tm.net, tm.x_train, tm.y_train, 0.9, cfg, 0)
    batch = bench_batch(tm.prep.apply(mw.x[test]), cfg.eval.batch, 0)
    dense = latency_bench(lambda b: tm.net.forward(b), batch, cfg.eval.warmup, cfg.eval.reps)
    s50 = latency_bench(prune.SparseNetwork(pruned50).forward, batch, cfg.eval.warmup, cfg.eval.reps)
    s90 = latency_bench(prune.SparseNetwork(pruned90).forward, batch, cfg.eval.warmup, cfg.eval.reps)
    gain50 = 1 - s50.median_ms / dense.median_ms
    gain90 = 1 - s90.median_ms / dense.median_ms
    stable = max(b.relative_iqr for b in (dense, s50, s90))
    ok = gain50 >= 0.10 and gain90 >= 0.15 and stable <= 0.2
    record(13, ok, f"[{CORPUS}] MLP7 dense {dense.median_ms:.2f} ms; sparse 50% {s50.median_ms:.2f} ms "
                   f"({gain50:+.1%}, need >= 10%); sparse 90% {s90.median_ms:.2f} ms ({gain90:+.1%}, need >= 15%); "
                   f"max IQR/median {stable:.3f} (<= 0.2)")


def test_c14_sweep_trend(compression_runs, main_corpus):
    cfg, corpora = main_corpus
    mw, test = corpora[0]
    _, tm, _ = compression_runs[("mlp", 0)]
    rows = run_sweep(tm, mw.x[test], mw.group[test], cfg, 0, [0.0, 0.25, 0.5, 0.75, 0.9])
    sizes = [r.size_bytes for r in rows]
    lat = [r.latency_ms for r in rows]
    ok = (not any(r.error for r in rows)
          and all(b < a for a, b in zip(sizes, sizes[1:]))
          and all(b <= a * 1.05 for a, b in zip(lat, lat[1:])))
    record(14, ok, f"[{CORPUS}] sizes {sizes} strictly decreasing; latency ms "
                   f"{[round(v, 2) for v in lat]} non-increasing within 5%")


def test_c15_artifact_detector():
    cfg = PipelineConfig()
    det = train_detector(load_artifacts(cfg, 0), cfg, 0, with_pruning=True)
    dense, pruned = det.reports
    ok = dense.accuracy >= 0.90 and abs(dense.accuracy - pruned.accuracy) <= 0.03
    record(15, ok, f"synthetic artifact corpus: unpruned {dense.accuracy:.2%} (>= 90%), "
                   f"pruned {pruned.accuracy:.2%} (within 3 pts)")
