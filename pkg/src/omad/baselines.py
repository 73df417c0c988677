"""Statistical baselines on extracted features: Gini random forest and RBF SVM (SMO)."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class DegenerateData(ValueError):
    pass


class NoConvergence(RuntimeWarning):
    pass


# --------------------------------------------------------------------------
# random forest


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 50
    max_depth: int = 5
    features_per_split: int | None = None  # None -> floor(sqrt(d))
    bootstrap: bool = True
    min_samples_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")


@dataclass
class Node:
    counts: np.ndarray
    feature: int = -1
    threshold: float = 0.0
    left: Node | None = None
    right: Node | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        d = {"counts": self.counts.tolist()}
        if not self.is_leaf:
            d.update(feature=self.feature, threshold=self.threshold,
                     left=self.left.to_dict(), right=self.right.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Node:
        node = cls(np.asarray(d["counts"], dtype=np.float64))
        if "feature" in d:
            node.feature = int(d["feature"])
            node.threshold = float(d["threshold"])
            node.left = cls.from_dict(d["left"])
            node.right = cls.from_dict(d["right"])
        return node


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return 1.0 - float(p @ p)


def _best_split(x: np.ndarray, y: np.ndarray, n_classes: int, features: np.ndarray):
    """Lowest weighted-Gini threshold over `features`; None if no split separates rows."""
    n = len(y)
    best = (math.inf, -1, 0.0)
    onehot = np.eye(n_classes)[y]
    total = onehot.sum(axis=0)
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]  # counts for the first i+1 rows
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        right = total - left
        gl = 1.0 - (left * left).sum(axis=1) / (nl * nl)
        gr = 1.0 - (right * right).sum(axis=1) / (nr * nr)
        score = (nl * gl + nr * gr) / n
        score[~valid] = math.inf
        i = int(np.argmin(score))
        if score[i] < best[0]:
            best = (float(score[i]), int(f), float((xs[i] + xs[i + 1]) / 2))
    return None if best[1] < 0 else best


def _grow(x, y, n_classes, depth, cfg: ForestConfig, k: int, rng) -> Node:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    node = Node(counts)
    if depth >= cfg.max_depth or len(y) < cfg.min_samples_split or np.count_nonzero(counts) < 2:
        return node
    feats = rng.choice(x.shape[1], size=k, replace=False)
    split = _best_split(x, y, n_classes, feats)
    if split is None or split[0] >= gini(counts) - 1e-12:
        return node
    _, f, thr = split
    go_left = x[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = _grow(x[go_left], y[go_left], n_classes, depth + 1, cfg, k, rng)
    node.right = _grow(x[~go_left], y[~go_left], n_classes, depth + 1, cfg, k, rng)
    return node


def tree_leaf_probs(node: Node, x: np.ndarray) -> np.ndarray:
    out = np.empty((len(x), len(node.counts)))
    idx = np.arange(len(x))
    stack = [(node, idx)]
    while stack:
        nd, rows = stack.pop()
        if nd.is_leaf:
            out[rows] = nd.counts / nd.counts.sum()
            continue
        left = x[rows, nd.feature] <= nd.threshold
        stack.append((nd.left, rows[left]))
        stack.append((nd.right, rows[~left]))
    return out


@dataclass
class Forest:
    trees: list[Node]
    n_features: int
    n_classes: int = 2
    config: ForestConfig = field(default_factory=ForestConfig)

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            from .nn import ShapeMismatch

            raise ShapeMismatch(f"forest expects (rows, {self.n_features}), got {x.shape}")
        return sum(tree_leaf_probs(t, x) for t in self.trees) / len(self.trees)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "type": "random_forest",
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "config": {k: getattr(self.config, k) for k in self.config.__dataclass_fields__},
            "trees": [t.to_dict() for t in self.trees],
        })

    @classmethod
    def from_json(cls, text: str) -> Forest:
        d = json.loads(text)
        return cls([Node.from_dict(t) for t in d["trees"]], d["n_features"], d["n_classes"],
                   ForestConfig(**d["config"]))


def train_forest(features, labels, cfg: ForestConfig | None = None) -> Forest:
    """Bagged CART trees, Gini splits on floor(sqrt(d)) random features per node."""
    cfg = cfg or ForestConfig()
    x = np.asarray(getattr(features, "values", features), dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateData("both classes must be present")
    if np.all(x == x[0]):
        raise DegenerateData("all feature rows are identical")
    n, d = x.shape
    n_classes = int(y.max()) + 1
    k = cfg.features_per_split or max(1, math.isqrt(d))
    k = min(k, d)
    trees = []
    for seq in np.random.SeedSequence(cfg.seed).spawn(cfg.n_estimators):
        rng = np.random.default_rng(seq)
        rows = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
        trees.append(_grow(x[rows], y[rows], n_classes, 0, cfg, k, rng))
    return Forest(trees, d, n_classes, cfg)


def predict_forest(forest: Forest, rows) -> tuple[np.ndarray, np.ndarray]:
    p = forest.predict_proba(rows)
    return p.argmax(axis=1), p


# --------------------------------------------------------------------------
# SVM


@dataclass(frozen=True)
class SvmConfig:
    c: float = 1.0
    gamma: float | str = "scale"
    smo_tolerance: float = 1e-3
    max_passes: int = 100_000

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("C must be positive")
        if not isinstance(self.gamma, str) and self.gamma <= 0:
            raise ValueError("gamma must be positive")


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> Standardizer:
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    standardizer: Standardizer
    converged: bool = True
    iterations: int = 0
    alphas: np.ndarray | None = field(default=None, repr=False)

    def decision_function(self, rows) -> np.ndarray:
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.support_vectors.shape[1]:
            from .nn import ShapeMismatch

            raise ShapeMismatch(f"svm expects (rows, {self.support_vectors.shape[1]}), got {x.shape}")
        x = self.standardizer.transform(x)
        return rbf_kernel(x, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def to_json(self) -> str:
        return json.dumps({
            "type": "svm_rbf",
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "mean": self.standardizer.mean.tolist(),
            "scale": self.standardizer.scale.tolist(),
            "converged": self.converged,
        })

    @classmethod
    def from_json(cls, text: str) -> SvmModel:
        d = json.loads(text)
        return cls(np.asarray(d["support_vectors"]), np.asarray(d["dual_coef"]), d["bias"], d["gamma"],
                   Standardizer(np.asarray(d["mean"]), np.asarray(d["scale"])), d["converged"])


def train_svm(features, labels, cfg: SvmConfig | None = None) -> SvmModel:
    """C-SVM dual solved by SMO with maximal-violating-pair working sets.

    `labels` are in {-1, +1}. Features are standardized inside; the statistics
    are stored on the model. Stops when the KKT gap m - M <= smo_tolerance.
    """
    cfg = cfg or SvmConfig()
    raw = np.asarray(getattr(features, "values", features), dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not set(np.unique(y)) <= {-1.0, 1.0} or len(np.unique(y)) < 2:
        raise ValueError("labels must contain both -1 and +1")
    std = Standardizer.fit(raw)
    x = std.transform(raw)
    n, d = x.shape
    if cfg.gamma == "scale":
        var = x.var()
        gamma = 1.0 / (d * var) if var > 0 else 1.0
    else:
        gamma = float(cfg.gamma)
    K = rbf_kernel(x, x, gamma)
    C = cfg.c
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    Qdiag = np.diag(K).copy()
    tau = 1e-12
    converged = False
    it = 0
    for it in range(1, cfg.max_passes + 1):
        # I_up / I_low index sets (Keerthi et al.)
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        yg = -y * grad
        m_up = np.where(up, yg, -np.inf)
        i = int(np.argmax(m_up))
        m_val = m_up[i]
        M_val = np.where(low, yg, np.inf).min()
        if m_val - M_val <= cfg.smo_tolerance:
            converged = True
            break
        # second-order choice of j among violating I_low members
        Ki = K[i]
        b = m_val - yg
        cand = low & (b > 0)
        a = Qdiag[i] + Qdiag - 2.0 * Ki
        a = np.where(a > 0, a, tau)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        yi, yj = y[i], y[j]
        quad = max(Qdiag[i] + Qdiag[j] - 2.0 * K[i, j], tau)
        delta = (-yi * grad[i] + yj * grad[j]) / quad
        ai_old, aj_old = alpha[i], alpha[j]
        # a_i += y_i*delta, a_j -= y_j*delta keeps sum(y*a) fixed; clip delta to the box
        lo_i, hi_i = (-ai_old, C - ai_old) if yi > 0 else (ai_old - C, ai_old)
        lo_j, hi_j = (aj_old - C, aj_old) if yj > 0 else (-aj_old, C - aj_old)
        delta = min(max(delta, max(lo_i, lo_j)), min(hi_i, hi_j))
        ai = min(max(ai_old + yi * delta, 0.0), C)
        aj = min(max(aj_old - yj * delta, 0.0), C)
        dai, daj = ai - ai_old, aj - aj_old
        alpha[i], alpha[j] = ai, aj
        grad += y * (K[:, i] * yi * dai + K[:, j] * yj * daj)
    if not converged:
        warnings.warn(f"SMO stopped after {cfg.max_passes} iterations with KKT violations", NoConvergence)

    yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(yg[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        bias = float((np.where(up, yg, -np.inf).max() + np.where(low, yg, np.inf).min()) / 2)
    sv = alpha > 0
    return SvmModel(x[sv], (alpha * y)[sv], bias, gamma, std, converged, it, alpha)


def predict_svm(model: SvmModel, rows) -> np.ndarray:
    """Sign of the decision value; exactly zero maps to +1."""
    return np.where(model.decision_function(rows) >= 0, 1, -1)
