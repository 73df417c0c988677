"""Filter-style feature selection: correlation redundancy pass, then Welch t-test."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc


class ZeroVariance(ValueError):
    pass


class AllDropped(RuntimeError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two 1-D vectors of equal length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        raise ZeroVariance("correlation undefined for a constant vector")
    r = (dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail P(|T| >= |t|) for Student's t via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < 1e-3 * df:
        # complement form keeps precision when df / (df + t^2) rounds to 1
        return float(1.0 - betainc(0.5, df / 2.0, t2 / (df + t2)))
    return float(betainc(df / 2.0, 0.5, df / (df + t2)))


def welch_t(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value."""
    t, p, _ = welch_t_df(a, b)
    return t, p


def welch_t_df(a, b) -> tuple[float, float, float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least 2 observations")
    va = a.var(ddof=1) / na
    vb = b.var(ddof=1) / nb
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            raise ZeroVariance("both groups are constant and equal")
        # perfectly separated constant groups
        return math.copysign(math.inf, diff), 0.0, float(na + nb - 2)
    t = diff / math.sqrt(se2)
    # Welch-Satterthwaite df, written in variance shares so tiny variances cannot underflow
    ra, rb = va / se2, vb / se2
    df = 1.0 / (ra * ra / (na - 1) + rb * rb / (nb - 1))
    return float(t), student_t_sf2(t, df), float(df)


@dataclass
class SelectionResult:
    kept_indices: list[int]
    dropped_by_correlation: list[int]
    dropped_by_ttest: list[int]
    t_stats: dict[int, float] = field(default_factory=dict)
    p_values: dict[int, float] = field(default_factory=dict)
    max_abs_r: dict[int, float] = field(default_factory=dict)
    names: list[str] | None = None

    def kept_names(self) -> list[str]:
        if self.names is None:
            raise ValueError("selection was run without column names")
        return [self.names[i] for i in self.kept_indices]

    def to_json(self, path=None) -> str:
        names = self.names or [str(i) for i in range(self._n_columns())]
        doc = {
            "kept": [names[i] for i in self.kept_indices],
            "dropped_by_correlation": [names[i] for i in self.dropped_by_correlation],
            "dropped_by_ttest": [names[i] for i in self.dropped_by_ttest],
            "stats": {
                names[i]: {"t": _jsonable(self.t_stats[i]), "p": self.p_values[i]}
                for i in sorted(self.t_stats)
            },
        }
        text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, source, names: list[str] | None = None) -> SelectionResult:
        """Load a persisted selection; `names` maps the stored names back to indices."""
        if hasattr(source, "read"):
            doc = json.load(source)
        else:
            text = str(source)
            doc = json.loads(text) if text.lstrip().startswith("{") else json.load(open(text))
        if names is None:
            names = doc["kept"] + doc["dropped_by_correlation"] + doc["dropped_by_ttest"]
        pos = {n: i for i, n in enumerate(names)}
        res = cls(
            [pos[n] for n in doc["kept"]],
            [pos[n] for n in doc["dropped_by_correlation"]],
            [pos[n] for n in doc["dropped_by_ttest"]],
            names=list(names),
        )
        for n, st in doc.get("stats", {}).items():
            res.t_stats[pos[n]] = float(st["t"])
            res.p_values[pos[n]] = float(st["p"])
        return res

    def _n_columns(self) -> int:
        return len(self.kept_indices) + len(self.dropped_by_correlation) + len(self.dropped_by_ttest)


def _jsonable(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def correlation_pass(values: np.ndarray, threshold: float) -> tuple[list[int], list[int], dict[int, float]]:
    """Left-to-right redundancy filter: a column is dropped when |r| with any
    already-kept column exceeds `threshold`. Constant columns never correlate."""
    x = np.asarray(values, dtype=np.float64)
    d = x - x.mean(axis=0)
    norm = np.sqrt((d * d).sum(axis=0))
    const = norm == 0
    z = np.divide(d, norm, out=np.zeros_like(d), where=~const)
    r = np.abs(z.T @ z)
    np.clip(r, 0.0, 1.0, out=r)
    kept: list[int] = []
    dropped: list[int] = []
    max_r: dict[int, float] = {}
    for j in range(x.shape[1]):
        if kept and not const[j]:
            m = float(r[j, kept].max())
            max_r[j] = m
            if m > threshold:
                dropped.append(j)
                continue
        else:
            max_r[j] = 0.0
        kept.append(j)
    return kept, dropped, max_r


def select_features(
    matrix,
    labels,
    corr_threshold: float = 0.9,
    p_threshold: float = 0.05,
    names: list[str] | None = None,
) -> SelectionResult:
    """Correlation pruning (first column wins) followed by a Welch t-test filter.

    `matrix` is an (n, d) array or a FeatureMatrix; `labels` holds two classes.
    """
    if hasattr(matrix, "values") and hasattr(matrix, "names"):
        names = names or list(matrix.names)
        matrix = matrix.values
    x = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("feature matrix must be non-empty and 2-D")
    classes = np.unique(y)
    if len(classes) != 2:
        raise ValueError(f"need exactly two classes, got {classes.tolist()}")
    if len(y) != len(x):
        raise ValueError("labels and rows differ in length")

    kept1, dropped_corr, max_r = correlation_pass(x, corr_threshold)
    a_rows = y == classes[0]
    kept, dropped_t = [], []
    t_stats, p_values = {}, {}
    for j in kept1:
        try:
            t, p = welch_t(x[a_rows, j], x[~a_rows, j])
        except ZeroVariance:
            t, p = 0.0, 1.0
        t_stats[j], p_values[j] = t, p
        (kept if p < p_threshold else dropped_t).append(j)
    if not kept:
        raise AllDropped(
            f"no feature survives corr_threshold={corr_threshold}, p_threshold={p_threshold}"
        )
    return SelectionResult(kept, dropped_corr, dropped_t, t_stats, p_values, max_r, names)
