"""Linear-logistic structural causal model with known counterfactuals.

Graph: u_r -> a, u_r -> x_r, (a, u_d) -> x_d, (a, u_d, u_r) -> y.

    u_r ~ N(0, I_k)        u_d ~ N(0, I_m)
    a   ~ Bernoulli(sigmoid(c_a . u_r + c_0))
    x_r = B_r u_r + noise_r * e_r     (the first ``n_binary_r`` columns are
                                       reported as indicators x > 0 and serve
                                       as the CE conditioners)
    x_d = B_d u_d + w_a a + noise_d * e_d
    y   ~ Bernoulli(sigmoid(v_a a + v_d . u_d + v_r . u_r + v_0))

Outcomes are drawn by thresholding a shared uniform, so the factual and
counterfactual worlds reuse every exogenous draw.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from ..numerics.autodiff import _sigmoid
from ..numerics.random import Rng
from .schema import AttributePartition, ColumnEncoding, TabularDataset, split_indices


def _default_b_r():
    return [[1.0, 0.0], [0.0, 1.0], [1.0, 0.5], [-0.5, 1.0], [0.7, -0.7], [0.3, 1.2]]


def _default_b_d():
    return [[1.0, 0.0], [0.0, 1.0], [0.7, 0.7], [1.0, -0.5]]


@dataclass
class ScmSpec:
    seed: int = 0
    c_a: list = field(default_factory=lambda: [1.5, 1.0])
    c_0: float = 0.0
    b_r: list = field(default_factory=_default_b_r)
    noise_r: float = 0.1
    n_binary_r: int = 2
    b_d: list = field(default_factory=_default_b_d)
    w_a: list = field(default_factory=lambda: [1.5, -1.0, 1.0, 0.5])
    noise_d: float = 0.3
    v_a: float = 1.5
    v_d: list = field(default_factory=lambda: [1.0, -0.5])
    v_r: list = field(default_factory=lambda: [0.8, 0.5])
    v_0: float = -1.0

    @property
    def k(self) -> int:
        return len(self.c_a)

    @property
    def m(self) -> int:
        return len(self.v_d)

    def validate(self) -> None:
        b_r, b_d = np.asarray(self.b_r, float), np.asarray(self.b_d, float)
        problems = []
        if b_r.ndim != 2 or b_r.shape[1] != self.k:
            problems.append(f"b_r must be p_r x {self.k}, got {b_r.shape}")
        if b_d.ndim != 2 or b_d.shape[1] != self.m:
            problems.append(f"b_d must be p_d x {self.m}, got {b_d.shape}")
        elif len(self.w_a) != b_d.shape[0]:
            problems.append(f"w_a has {len(self.w_a)} entries for {b_d.shape[0]} x_d columns")
        if len(self.v_r) != self.k:
            problems.append(f"v_r has {len(self.v_r)} entries, expected {self.k}")
        if not (self.noise_r > 0 and self.noise_d > 0):
            problems.append("noise std must be positive")
        if b_r.ndim == 2 and not 0 <= self.n_binary_r <= b_r.shape[0]:
            problems.append(f"n_binary_r={self.n_binary_r} out of range")
        if problems:
            raise ValueError("inconsistent SCM spec: " + "; ".join(problems))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        return cls(**d)

    def outcome_prob(self, a, u_d, u_r) -> np.ndarray:
        """P(y = 1 | do(a), u_d, u_r)."""
        logit = (self.v_a * np.asarray(a, float) + np.asarray(u_d) @ np.asarray(self.v_d, float)
                 + np.asarray(u_r) @ np.asarray(self.v_r, float) + self.v_0)
        return _sigmoid(np.asarray(logit, float))

    def descendants(self, a, u_d, e_d) -> np.ndarray:
        b_d = np.asarray(self.b_d, float)
        return u_d @ b_d.T + np.outer(a, self.w_a) + self.noise_d * e_d

    def column_names(self) -> tuple[list[str], list[str]]:
        p_r = len(self.b_r)
        xr = [f"o{j + 1}" if j < self.n_binary_r else f"xr{j + 1}" for j in range(p_r)]
        xd = [f"xd{j + 1}" for j in range(len(self.b_d))]
        return xd, xr

    def partition(self) -> AttributePartition:
        xd, xr = self.column_names()
        return AttributePartition("a", "y", tuple(xd), tuple(xr))

    def conditioners(self) -> tuple[str, ...]:
        _, xr = self.column_names()
        return tuple(xr[:2]) if self.n_binary_r >= 2 else ()


@dataclass
class ScmSample:
    spec: ScmSpec
    dataset: TabularDataset
    u_d: np.ndarray
    u_r: np.ndarray
    exo_y: np.ndarray          # shared uniform behind every outcome draw
    e_d: np.ndarray            # shared x_d noise
    p_do1: np.ndarray          # P(y=1 | do(a=1), u)
    p_do0: np.ndarray
    y_cf: np.ndarray           # outcome under the negated a
    xd_cf: np.ndarray          # raw x_d under the negated a

    @property
    def p_factual(self) -> np.ndarray:
        return np.where(self.dataset.a == 1, self.p_do1, self.p_do0)

    @property
    def p_cf(self) -> np.ndarray:
        """True counterfactual P(y=1) under the negated a."""
        return np.where(self.dataset.a == 1, self.p_do0, self.p_do1)

    @property
    def true_te(self) -> float:
        return float(np.mean(self.p_do1 - self.p_do0))

    @property
    def true_ce(self) -> np.ndarray:
        """2x2 table of mean effect within each conditioning cell (NaN for empty cells)."""
        cells = self.dataset.condition_cells()
        diff = self.p_do1 - self.p_do0
        table = np.full((2, 2), np.nan)
        for c in range(4):
            sel = cells == c
            if sel.any():
                table[c // 2, c % 2] = diff[sel].mean()
        return table

    def intervene(self, a) -> tuple[np.ndarray, np.ndarray]:
        """Outcome and raw x_d under an arbitrary a, reusing every exogenous draw."""
        a = np.asarray(a, float)
        p = self.spec.outcome_prob(a, self.u_d, self.u_r)
        return (self.exo_y < p).astype(int), self.spec.descendants(a, self.u_d, self.e_d)

    def subset(self, index) -> "ScmSample":
        index = np.asarray(index)
        return ScmSample(
            self.spec, self.dataset.subset(index), self.u_d[index], self.u_r[index],
            self.exo_y[index], self.e_d[index], self.p_do1[index], self.p_do0[index],
            self.y_cf[index], self.xd_cf[index],
        )

    def truth(self) -> dict:
        return {
            "te": self.true_te,
            "ce": [[None if np.isnan(v) else float(v) for v in row] for row in self.true_ce],
            "conditioners": list(self.dataset.conditioners),
            "n": len(self.dataset),
        }

    def truth_frame(self) -> pd.DataFrame:
        cols = {"p_do1": self.p_do1, "p_do0": self.p_do0, "y_cf": self.y_cf}
        for j in range(self.u_d.shape[1]):
            cols[f"u_d{j + 1}"] = self.u_d[:, j]
        for j in range(self.u_r.shape[1]):
            cols[f"u_r{j + 1}"] = self.u_r[:, j]
        return pd.DataFrame(cols)


def generate_scm(spec: ScmSpec, n: int) -> ScmSample:
    spec.validate()
    if n < 1:
        raise ValueError(f"generate_scm needs n >= 1, got {n}")
    rng = Rng(spec.seed)
    k, m = spec.k, spec.m
    b_r = np.asarray(spec.b_r, float)
    p_r, p_d = b_r.shape[0], len(spec.b_d)

    u_r = rng.normal((n, k))
    u_d = rng.normal((n, m))
    a = (rng.uniform(size=n) < _sigmoid(u_r @ np.asarray(spec.c_a, float) + spec.c_0)).astype(int)
    e_r = rng.normal((n, p_r))
    e_d = rng.normal((n, p_d))
    exo_y = rng.uniform(size=n)

    xr_latent = u_r @ b_r.T + spec.noise_r * e_r
    xd = spec.descendants(a, u_d, e_d)
    p_do1 = spec.outcome_prob(np.ones(n), u_d, u_r)
    p_do0 = spec.outcome_prob(np.zeros(n), u_d, u_r)
    y = (exo_y < np.where(a == 1, p_do1, p_do0)).astype(int)
    y_cf = (exo_y < np.where(a == 1, p_do0, p_do1)).astype(int)
    xd_cf = spec.descendants(1 - a, u_d, e_d)

    xd_names, xr_names = spec.column_names()
    cols: dict = {"a": a}
    for j, name in enumerate(xd_names):
        cols[name] = xd[:, j]
    for j, name in enumerate(xr_names):
        cols[name] = (xr_latent[:, j] > 0).astype(int) if j < spec.n_binary_r else xr_latent[:, j]
    cols["y"] = y
    frame = pd.DataFrame(cols)

    encodings = [ColumnEncoding(c, "continuous") for c in xd_names]
    encodings += [ColumnEncoding(c, "binary" if j < spec.n_binary_r else "continuous")
                  for j, c in enumerate(xr_names)]
    ds = TabularDataset.build(frame, spec.partition(), encodings, spec.conditioners())
    return ScmSample(spec, ds, u_d, u_r, exo_y, e_d, p_do1, p_do0, y_cf, xd_cf)


def split_scm(sample: ScmSample, test_fraction: float, rng) -> tuple[ScmSample, ScmSample]:
    """Seeded split of an SCM sample; standardization refit on the train side."""
    train_idx, test_idx = split_indices(len(sample.dataset), test_fraction, rng)
    train, test = sample.subset(train_idx), sample.subset(test_idx)
    fitted = [e.fit(train.dataset.raw[e.name]) for e in sample.dataset.encodings]
    train.dataset = train.dataset.reencode(fitted)
    test.dataset = test.dataset.reencode(fitted)
    return train, test
