"""Stationary posterior covariance of a linear DCEVAE and its empirical counterpart.

Latents are laid out as ``u = [u_r, u_d]`` with widths ``n`` and ``m``. The
masks ``M_r = diag(I_n, 0_m)`` and ``M_d = diag(0_n, I_m)`` select the two
blocks. With

    A = (W_r' M_r' W_r + W_d' M_d' W_d + diag(W_y' W_y)) / sigma^2 + I + beta inv(S_bar)'

the stationary covariance is ``Sigma* = inv(A / (1 + beta))``. It is the
minimizer of

    F(Sigma) = 1/2 tr(A Sigma) / (1 + beta) - 1/2 log det Sigma

which :func:`sigma_numeric` descends directly as an independent check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import NumericalError, Rng

MASK_FORMS = ("printed", "latent")


@dataclass
class LinearModelSpec:
    """Decoder weights and TC weight of a linear DCEVAE.

    ``mask="printed"`` uses ``W' M' W`` as written, so W_r and W_d must be
    square of size n + m. ``mask="latent"`` instead zeroes the latent columns a
    decoder does not read, ``M' W' W M``, and accepts any number of rows.
    """

    w_r: np.ndarray
    w_d: np.ndarray
    w_y: np.ndarray
    sigma2: float
    beta: float
    sigma_bar: np.ndarray
    n: int
    m: int
    diag_y: bool = True
    mask: str = "printed"

    def __post_init__(self):
        self.w_r = np.atleast_2d(np.asarray(self.w_r, float))
        self.w_d = np.atleast_2d(np.asarray(self.w_d, float))
        self.w_y = np.atleast_2d(np.asarray(self.w_y, float))
        self.sigma_bar = np.asarray(self.sigma_bar, float)
        self.validate()

    @property
    def dim(self) -> int:
        return self.n + self.m

    def validate(self) -> None:
        L = self.dim
        if self.n < 1 or self.m < 1:
            raise ValueError("latent block widths must be positive")
        if self.mask not in MASK_FORMS:
            raise ValueError(f"unknown mask form {self.mask!r}; expected one of {MASK_FORMS}")
        for name in ("w_r", "w_d", "w_y"):
            w = getattr(self, name)
            if w.shape[1] != L:
                raise ValueError(f"{name} must have {L} columns, got {w.shape}")
        if self.mask == "printed":
            for name in ("w_r", "w_d"):
                if getattr(self, name).shape[0] != L:
                    raise ValueError(f"printed mask form needs {name} of shape ({L}, {L})")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        s = self.sigma_bar
        if s.shape != (L, L):
            raise ValueError(f"sigma_bar must be ({L}, {L}), got {s.shape}")
        if not np.allclose(s, s.T, atol=1e-12):
            raise ValueError("sigma_bar must be symmetric")
        if np.any(s[: self.n, self.n:] != 0):
            raise ValueError("sigma_bar must have a zero u_r/u_d cross block")
        if np.linalg.eigvalsh(s).min() <= 0:
            raise ValueError("sigma_bar must be positive definite")

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        m_r = np.diag(np.r_[np.ones(self.n), np.zeros(self.m)])
        return m_r, np.eye(self.dim) - m_r

    def to_dict(self) -> dict:
        return {
            "w_r": self.w_r.tolist(), "w_d": self.w_d.tolist(), "w_y": self.w_y.tolist(),
            "sigma2": self.sigma2, "beta": self.beta, "sigma_bar": self.sigma_bar.tolist(),
            "n": self.n, "m": self.m, "diag_y": self.diag_y, "mask": self.mask,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModelSpec":
        return cls(**d)


def reference_covariance(joint_cov: np.ndarray, n: int) -> np.ndarray:
    """The permuted-latent covariance: ``joint_cov`` with its u_r/u_d cross block zeroed."""
    s = np.array(joint_cov, float, copy=True)
    s[:n, n:] = 0.0
    s[n:, :n] = 0.0
    return s


def random_spec(rng: Rng, n: int, m: int, beta: float = 1.0, sigma2: float = 1.0, **kw) -> LinearModelSpec:
    """Random weights and a random block-diagonal reference covariance."""
    L = n + m
    p_y = 1
    g = rng.normal((L, L))
    joint = g @ g.T / L + 0.5 * np.eye(L)
    rows = L if kw.get("mask", "printed") == "printed" else 3
    return LinearModelSpec(
        w_r=rng.normal((rows, L)), w_d=rng.normal((rows, L)), w_y=rng.normal((p_y, L)),
        sigma2=sigma2, beta=beta, sigma_bar=reference_covariance(joint, n), n=n, m=m, **kw,
    )


def inner_matrix(spec: LinearModelSpec) -> np.ndarray:
    """The matrix A whose scaled inverse is the stationary covariance."""
    m_r, m_d = spec.masks()
    if spec.mask == "printed":
        rec = spec.w_r.T @ m_r.T @ spec.w_r + spec.w_d.T @ m_d.T @ spec.w_d
    else:
        rec = m_r.T @ spec.w_r.T @ spec.w_r @ m_r + m_d.T @ spec.w_d.T @ spec.w_d @ m_d
    wy = spec.w_y.T @ spec.w_y
    if spec.diag_y:
        wy = np.diag(np.diag(wy))
    a = (rec + wy) / spec.sigma2 + np.eye(spec.dim)
    if spec.beta > 0:
        a = a + spec.beta * np.linalg.inv(spec.sigma_bar).T
    return a


def sigma_star(spec: LinearModelSpec, max_condition: float = 1e12) -> np.ndarray:
    """Closed-form stationary covariance."""
    inner = inner_matrix(spec) / (1.0 + spec.beta)
    cond = np.linalg.cond(inner)
    if not np.isfinite(cond) or cond > max_condition:
        raise np.linalg.LinAlgError(f"inner matrix is singular (condition number {cond:.3g})")
    s = np.linalg.inv(inner)
    return 0.5 * (s + s.T)


def objective(spec: LinearModelSpec, sigma: np.ndarray) -> float:
    """1/2 tr(A Sigma) / (1 + beta) - 1/2 log det Sigma (+inf outside the PD cone)."""
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return np.inf
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return 0.5 * np.trace(inner_matrix(spec) @ sigma) / (1.0 + spec.beta) - 0.5 * logdet


@dataclass
class DescentResult:
    sigma: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool


def sigma_numeric(spec: LinearModelSpec, tol: float = 1e-9, max_iter: int = 10_000,
                  raise_on_failure: bool = True) -> DescentResult:
    """Minimize :func:`objective` over symmetric positive definite Sigma.

    Steps follow the gradient under the affine-invariant metric of the PD
    cone, ``Sigma <- Sigma - t * Sigma G Sigma``, with a backtracking line
    search on ``t`` (starting at 1) that keeps the iterate positive definite
    and decreases the objective. Stops when the Euclidean gradient norm falls
    below ``tol``.
    """
    a = inner_matrix(spec) / (1.0 + spec.beta)
    sigma = np.eye(spec.dim)
    f = objective(spec, sigma)
    g_norm = np.inf
    for it in range(1, max_iter + 1):
        grad = 0.5 * a - 0.5 * np.linalg.inv(sigma)
        grad = 0.5 * (grad + grad.T)
        g_norm = float(np.linalg.norm(grad))
        if g_norm < tol:
            return DescentResult(sigma, it - 1, g_norm, True)
        direction = sigma @ grad @ sigma
        slope = float(np.sum(grad * direction))
        t = 1.0
        # near the optimum, decreases drop below the rounding of f
        slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
        while True:
            cand = sigma - t * direction
            cand = 0.5 * (cand + cand.T)
            f_new = objective(spec, cand)
            if f_new <= f - 1e-4 * t * slope + slack or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and f_new > f:
            # no further decrease representable in floating point
            break
        sigma, f = cand, f_new
    if raise_on_failure:
        raise NumericalError(f"sigma_numeric did not converge: gradient norm {g_norm:.3g} after {max_iter} iterations")
    return DescentResult(sigma, max_iter, g_norm, False)


def block_score(cov: np.ndarray, n: int) -> float:
    """Frobenius norm of the u_r/u_d cross blocks over the Frobenius norm of the whole matrix."""
    cov = np.asarray(cov, float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("block_score needs a square matrix")
    if not 0 < n < cov.shape[0]:
        raise ValueError(f"block split {n} outside (0, {cov.shape[0]})")
    total = np.linalg.norm(cov)
    if total == 0:
        return 0.0
    off = np.sqrt(np.linalg.norm(cov[:n, n:]) ** 2 + np.linalg.norm(cov[n:, :n]) ** 2)
    return float(off / total)


# ---------------------------------------------------------------------------
# empirical covariance of trained models


def sample_covariance(latents: np.ndarray) -> np.ndarray:
    latents = np.asarray(latents, float)
    if latents.ndim != 2:
        raise ValueError("latents must be a (records, dim) matrix")
    n_rec, dim = latents.shape
    if n_rec < dim + 1:
        raise ValueError(f"need at least {dim + 1} records for a {dim}-dimensional covariance, got {n_rec}")
    return np.cov(latents, rowvar=False)


def empirical_covariance(model, ds, rng: Rng | None = None, by_a: bool = False) -> dict:
    """Covariance of posterior samples laid out as [u_r, u_d].

    For single-latent baselines the first ``latent_r`` coordinates play the
    part of u_r. ``by_a`` splits records by their a (one covariance per
    CEVAE decoder).
    """
    from .counterfactual import abduct

    rng = rng if rng is not None else Rng(model.config.seed).child(3)
    latents = abduct(model, ds, "sample", k=1, rng=rng)[0]
    n = model.config.latent_r
    out = {"n": n}
    groups = {"all": np.ones(len(ds), bool)}
    if by_a:
        groups = {"a=0": ds.a == 0, "a=1": ds.a == 1}
    for name, sel in groups.items():
        cov = sample_covariance(latents[sel])
        out[name] = {"cov": cov, "block_score": block_score(cov, n)}
    return out


@dataclass
class CovarianceReport:
    sigma_star: list | None = None
    sigma_numeric: list | None = None
    sigma_bar: list | None = None
    sigma_empirical: dict = field(default_factory=dict)
    block_score: float | None = None
    agreement: float | None = None        # Frobenius distance star vs numeric
    agrees: bool | None = None
    config_hash: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def spec_report(spec: LinearModelSpec, tol: float = 1e-6) -> CovarianceReport:
    star = sigma_star(spec)
    numeric = sigma_numeric(spec).sigma
    dist = float(np.linalg.norm(star - numeric))
    return CovarianceReport(
        sigma_star=star.tolist(), sigma_numeric=numeric.tolist(), sigma_bar=spec.sigma_bar.tolist(),
        block_score=block_score(star, spec.n), agreement=dist, agrees=bool(dist < tol),
    )


def model_report(model, ds, rng: Rng | None = None) -> CovarianceReport:
    emp = empirical_covariance(model, ds, rng, by_a=model.variant == "cevae")
    mats = {k: {"cov": v["cov"].tolist(), "block_score": v["block_score"]}
            for k, v in emp.items() if k != "n"}
    scores = [v["block_score"] for v in mats.values()]
    return CovarianceReport(sigma_empirical=mats, block_score=float(np.mean(scores)),
                            config_hash=model.config.hash())


def write_heatmap_csv(matrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(matrix, float), delimiter=",", fmt="%.10g")
    return path
