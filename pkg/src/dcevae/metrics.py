"""Causal-effect metrics, distribution distance and downstream linear classifiers.

Effects come either from a real dataset (empirical conditional differences)
or from a trained model (abducted latents, outcome under do(a=1) minus
do(a=0)). Conditioning cells are indexed by two binary columns declared on
the dataset: ``table[o1][o2]``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.schema import TabularDataset
from .numerics import Rng

log = logging.getLogger(__name__)

CLASSIFIERS = ("logistic", "svm")


# ---------------------------------------------------------------------------
# effects


def _check_binary_a(a: np.ndarray) -> None:
    if len(np.unique(a)) < 2:
        raise ValueError("a takes a single value; the effect is undefined")


def empirical_effect(a: np.ndarray, y: np.ndarray) -> float:
    """P(y=1 | a=1) - P(y=1 | a=0)."""
    a, y = np.asarray(a), np.asarray(y, float)
    _check_binary_a(a)
    return float(y[a == 1].mean() - y[a == 0].mean())


def model_record_effects(model, ds: TabularDataset, mode: str = "mean", k: int = 32,
                         rng: Rng | None = None) -> np.ndarray:
    """Per-record p(y | do(a=1), u) - p(y | do(a=0), u), averaged over latent draws."""
    from .counterfactual import abduct

    latents = abduct(model, ds, mode, k, rng)
    ones, zeros = np.ones(len(ds)), np.zeros(len(ds))
    return np.mean([model.outcome_prob(ones, j) - model.outcome_prob(zeros, j) for j in latents], axis=0)


def total_effect(ds: TabularDataset, model=None, **kw) -> float:
    """TE of the real data (no model) or of the model evaluated on ``ds``."""
    _check_binary_a(ds.a)
    if model is None:
        return empirical_effect(ds.a, ds.y)
    return float(np.mean(model_record_effects(model, ds, **kw)))


@dataclass
class CeTable:
    table: np.ndarray          # 2x2, NaN where a cell cannot be estimated
    counts: np.ndarray         # records per cell

    @property
    def empty(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(2) for j in range(2) if np.isnan(self.table[i, j])]


def counterfactual_effect(ds: TabularDataset, model=None, effects: np.ndarray | None = None,
                          **kw) -> CeTable:
    """Effect within each cell of the dataset's two binary conditioners.

    Real data: P(y=1 | a=1, o) - P(y=1 | a=0, o); a cell lacking either value
    of a is flagged (NaN). Model: mean per-record effect within the cell.
    """
    cells = ds.condition_cells()
    if model is not None and effects is None:
        effects = model_record_effects(model, ds, **kw)
    table = np.full((2, 2), np.nan)
    counts = np.zeros((2, 2), dtype=int)
    for c in range(4):
        sel = cells == c
        counts[c // 2, c % 2] = int(sel.sum())
        if effects is not None:
            if sel.any():
                table[c // 2, c % 2] = effects[sel].mean()
        elif len(np.unique(ds.a[sel])) == 2:
            table[c // 2, c % 2] = empirical_effect(ds.a[sel], ds.y[sel])
    for i, j in [(i, j) for i in range(2) for j in range(2) if np.isnan(table[i, j])]:
        warnings.warn(f"conditioning cell ({i}, {j}) has no estimable effect", RuntimeWarning, stacklevel=2)
    return CeTable(table, counts)


def ce_error(table, reference) -> float:
    """sum |o - o*| / 4 over the cells; cells missing on either side are skipped."""
    table, reference = np.asarray(table, float), np.asarray(reference, float)
    if table.shape != (2, 2) or reference.shape != (2, 2):
        raise ValueError("CE tables must be 2x2")
    ok = ~(np.isnan(table) | np.isnan(reference))
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} CE cell(s) excluded from the error", RuntimeWarning, stacklevel=2)
    return float(np.abs(table - reference)[ok].sum() / 4.0)


# ---------------------------------------------------------------------------
# chi-square distance


def _histograms(p_vals, q_vals, kind: str, n_bins: int):
    if kind == "continuous":
        pooled = np.concatenate([p_vals, q_vals]).astype(float)
        edges = np.unique(np.quantile(pooled, np.linspace(0, 1, n_bins + 1))[1:-1])
        p_idx = np.searchsorted(edges, np.asarray(p_vals, float), side="right")
        q_idx = np.searchsorted(edges, np.asarray(q_vals, float), side="right")
        size = len(edges) + 1
        return (np.bincount(p_idx, minlength=size) / len(p_vals),
                np.bincount(q_idx, minlength=size) / len(q_vals))
    cats = sorted(set(np.asarray(p_vals).tolist()) | set(np.asarray(q_vals).tolist()), key=str)
    p = np.array([np.mean(np.asarray(p_vals) == c) for c in cats])
    q = np.array([np.mean(np.asarray(q_vals) == c) for c in cats])
    return p, q


def column_chi_square(p_vals, q_vals, kind: str = "categorical", n_bins: int = 10) -> float:
    """sum over bins of (p - q)^2 / (p + q), bins empty on both sides skipped."""
    p, q = _histograms(p_vals, q_vals, kind, n_bins)
    s = p + q
    ok = s > 0
    return float(np.sum((p[ok] - q[ok]) ** 2 / s[ok]))


def chi_square_distance(generated: TabularDataset, real: TabularDataset, n_bins: int = 10) -> float:
    """Mean per-column chi-square distance between two datasets of the same schema.

    Continuous columns are cut into ``n_bins`` equal-quantile bins of the pooled
    values, which keeps the distance symmetric in its arguments.
    """
    if generated.partition != real.partition:
        raise ValueError("chi-square distance needs datasets with the same partition")
    kinds = {e.name: e.kind for e in real.encodings}
    gen_kinds = {e.name: e.kind for e in generated.encodings}
    if kinds != gen_kinds:
        raise ValueError("chi-square distance needs datasets with the same column encodings")
    kinds[real.partition.sensitive] = kinds[real.partition.outcome] = "binary"
    values = [
        column_chi_square(generated.raw[c].to_numpy(), real.raw[c].to_numpy(), kinds[c], n_bins)
        for c in real.partition.columns
    ]
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# classifiers


@dataclass
class LinearClassifier:
    """Linear model on [a, x] trained by seeded full-batch gradient descent.

    ``logistic`` minimizes mean log-loss, ``svm`` mean hinge loss on +-1
    labels; both add ``l2 / 2 * |w|^2``.
    """

    kind: str = "logistic"
    lr: float = 0.5
    iterations: int = 1000
    l2: float = 1e-4
    seed: int = 0
    weights: np.ndarray | None = field(default=None, repr=False)
    bias: float = 0.0

    def __post_init__(self):
        if self.kind not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {self.kind!r}; expected one of {CLASSIFIERS}")

    def fit(self, features: np.ndarray, labels: np.ndarray) -> "LinearClassifier":
        X = np.asarray(features, float)
        y = np.asarray(labels, float)
        if len(np.unique(y)) < 2:
            raise ValueError("training labels contain a single class")
        n, d = X.shape
        w = Rng(self.seed).normal(d) * 0.01
        b = 0.0
        s = 2.0 * y - 1.0
        for _ in range(self.iterations):
            z = X @ w + b
            if self.kind == "logistic":
                r = _sigmoid(z) - y
            else:
                r = np.where(s * z < 1.0, -s, 0.0)
            w -= self.lr * (X.T @ r / n + self.l2 * w)
            b -= self.lr * r.mean()
        if not (np.isfinite(w).all() and np.isfinite(b)):
            raise FloatingPointError("classifier weights diverged")
        self.weights, self.bias = w, float(b)
        return self

    def decision(self, features: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("classifier is not fitted")
        return np.asarray(features, float) @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        # z >= 0 is p >= 0.5 for logistic and the positive side for hinge
        return (self.decision(features) >= 0).astype(float)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(features) == np.asarray(labels, float)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def classifier_features(ds: TabularDataset) -> np.ndarray:
    return np.hstack([ds.a[:, None], ds.xd, ds.xr])


def train_eval_classifier(kind: str, train_set: TabularDataset, test_set: TabularDataset,
                          seed: int = 0, **kw) -> float:
    """Fit on ``train_set`` (real or generated), report accuracy on held-out real data."""
    if train_set.x.shape[1] != test_set.x.shape[1]:
        raise ValueError("train and test sets have different encoded widths")
    clf = LinearClassifier(kind, seed=seed, **kw).fit(classifier_features(train_set), train_set.y)
    return clf.accuracy(classifier_features(test_set), test_set.y)


# ---------------------------------------------------------------------------
# report


@dataclass
class EffectReport:
    te: float
    ce: list
    ce_error: float | None = None
    chi2: float | None = None
    lr_acc: float | None = None
    svm_acc: float | None = None
    provenance: str = "real"
    config_hash: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EffectReport":
        return cls(**d)


def table_to_list(table) -> list:
    return [[None if np.isnan(v) else float(v) for v in row] for row in np.asarray(table, float)]


def list_to_table(rows) -> np.ndarray:
    return np.array([[np.nan if v is None else v for v in row] for row in rows], float)


def effect_report(ds: TabularDataset, model=None, reference=None, train_set=None, test_set=None,
                  generated: TabularDataset | None = None, mode: str = "mean") -> EffectReport:
    """TE, CE table, CE error against ``reference`` and, when given, chi-square and accuracies."""
    effects = None
    if model is not None:
        effects = model_record_effects(model, ds, mode)
        te = float(effects.mean())
    else:
        te = total_effect(ds)
    ce = counterfactual_effect(ds, effects=effects).table
    report = EffectReport(
        te=te, ce=table_to_list(ce),
        provenance="real" if model is None else model.variant,
        config_hash=None if model is None else model.config.hash(),
    )
    if reference is not None:
        report.ce_error = ce_error(ce, reference)
    if generated is not None:
        report.chi2 = chi_square_distance(generated, ds)
    if train_set is not None and test_set is not None:
        report.lr_acc = train_eval_classifier("logistic", train_set, test_set)
        report.svm_acc = train_eval_classifier("svm", train_set, test_set)
    return report
