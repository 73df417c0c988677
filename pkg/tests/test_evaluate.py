import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omad.evaluate import (
    COMPRESSION_COLUMNS,
    SWEEP_COLUMNS,
    BenchResult,
    LengthMismatch,
    MetricsReport,
    bench_batch,
    confusion_metrics,
    latency_bench,
    sparsity_sweep,
    write_csv,
    write_sweep,
)
from omad.nn import artifact_mlp
from omad.prune import prune_to, to_bytes


def test_confusion_worked_example():
    m = confusion_metrics([1, 1, 0, 0, 1, 0], [1, 0, 0, 1, 1, 0])
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 2)
    assert m.accuracy == pytest.approx(4 / 6)
    assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3)


def test_confusion_zero_denominators():
    m = confusion_metrics([0, 0, 0], [0, 0, 0])
    assert m.accuracy == 1.0 and m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0
    with pytest.raises(LengthMismatch):
        confusion_metrics([0, 1], [0])
    with pytest.raises(LengthMismatch):
        confusion_metrics([], [])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_confusion_against_sklearn(pairs):
    metrics = pytest.importorskip("sklearn.metrics")
    p, a = map(list, zip(*pairs))
    m = confusion_metrics(p, a)
    assert m.tp + m.fp + m.fn + m.tn == len(p)
    assert m.accuracy == pytest.approx(metrics.accuracy_score(a, p))
    assert m.f1 == pytest.approx(metrics.f1_score(a, p, zero_division=0))
    assert m.precision == pytest.approx(metrics.precision_score(a, p, zero_division=0))


def test_latency_bench_statistics():
    calls = []
    res = latency_bench(lambda b: calls.append(len(b)), np.zeros((64, 3)), warmup=3, reps=11)
    assert len(calls) == 14 and len(res.samples_ms) == 11
    q1, med, q3 = np.percentile(res.samples_ms, [25, 50, 75])
    assert res.median_ms == med and res.iqr_ms == pytest.approx(q3 - q1)
    assert res.hardware
    with pytest.raises(ValueError):
        latency_bench(lambda b: None, np.zeros(1), reps=0)


def test_bench_batch_is_fixed():
    x = np.arange(200)[:, None]
    a, b = bench_batch(x, 64, seed=3), bench_batch(x, 64, seed=3)
    assert a.shape == (64, 1) and np.array_equal(a, b)
    assert len(np.unique(a)) == 64
    assert bench_batch(x[:10], 64).shape == (64, 1)


def test_metrics_report_validation():
    MetricsReport("MLP7", 0.9, 0.8, 100, 1.0)
    with pytest.raises(ValueError):
        MetricsReport("MLP7", 1.2, 0.8, 100, 1.0)
    with pytest.raises(ValueError):
        MetricsReport("MLP7", 0.9, math.nan, 100, 1.0)
    with pytest.raises(ValueError):
        MetricsReport("MLP7", 0.9, 0.8, 0, 1.0)


def test_write_csv_format(tmp_path):
    row = {"model": "CNN", "pruned": True, "size_bytes": 1234, "latency_ms": 1.23456, "accuracy": 0.5, "f1": 1 / 3}
    path = write_csv(tmp_path / "sub" / "c.csv", COMPRESSION_COLUMNS, [row])
    text = path.read_text().splitlines()
    assert text[0] == ",".join(COMPRESSION_COLUMNS)
    assert text[1] == "CNN,true,1234,1.2346,0.5000,0.3333"


def test_sparsity_sweep_records_failures_and_continues(tmp_path):
    def train_pruned(s):
        if s == 0.5:
            raise RuntimeError("boom")
        return prune_to(artifact_mlp(16, seed=0), s)

    fake = BenchResult(2.0, 0.1, (2.0,), "test")
    rows = sparsity_sweep(train_pruned, lambda m: 0.75, lambda m: len(to_bytes(m)), lambda m: fake, [0.0, 0.5, 0.9])
    assert [r.sparsity for r in rows] == [0.0, 0.5, 0.9]
    assert rows[1].error and math.isnan(rows[1].accuracy)
    assert rows[0].size_bytes > rows[2].size_bytes
    assert rows[2].realized_sparsity == pytest.approx(0.9, abs=0.01)
    path = write_sweep(tmp_path / "sweep.csv", rows)
    with open(path) as fh:
        got = list(csv.DictReader(fh))
    assert list(got[0]) == list(SWEEP_COLUMNS) and got[2]["accuracy"] == "0.7500"
    with pytest.raises(ValueError):
        sparsity_sweep(train_pruned, None, None, None, [0.5, 0.2])
    with pytest.raises(ValueError):
        sparsity_sweep(train_pruned, None, None, None, [0.99])
