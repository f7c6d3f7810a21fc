"""RBF-kernel maximum mean discrepancy."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Var


def _check(xs, ys):
    xv, yv = ad.value(xs), ad.value(ys)
    if xv.ndim != 2 or yv.ndim != 2:
        raise ShapeError(f"rbf_mmd expects 2-D batches, got {xv.shape} and {yv.shape}")
    if len(xv) < 2 or len(yv) < 2:
        raise ValueError("rbf_mmd needs at least two samples per batch")
    if xv.shape[1] != yv.shape[1]:
        raise ShapeError(f"rbf_mmd: widths differ ({xv.shape[1]} vs {yv.shape[1]})")


def _sq_dists(x, y):
    """Pairwise squared distances, traced when either side is a Var."""
    if isinstance(x, Var) or isinstance(y, Var):
        xx = ad.sum(ad.square(x), axis=1, keepdims=True) if isinstance(x, Var) else \
            np.sum(ad.value(x) ** 2, axis=1, keepdims=True)
        yy = ad.sum(ad.square(y), axis=1, keepdims=True) if isinstance(y, Var) else \
            np.sum(ad.value(y) ** 2, axis=1, keepdims=True)
        yt = ad.transpose(y) if isinstance(y, Var) else ad.value(y).T
        yyt = ad.transpose(yy) if isinstance(yy, Var) else yy.T
        return xx + yyt - 2.0 * (x @ yt)
    x, y = np.asarray(x, float), np.asarray(y, float)
    d = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def _kernel_mean(d2, bandwidths, mask=None):
    """Mean over pairs (optionally masked) of the bandwidth-averaged RBF kernel."""
    traced = isinstance(d2, Var)
    total = None
    for bw in bandwidths:
        k = ad.exp(d2 * (-0.5 / bw**2)) if traced else np.exp(-0.5 * d2 / bw**2)
        total = k if total is None else total + k
    total = total * (1.0 / len(bandwidths))
    if mask is not None:
        total = total * mask
        n = mask.sum()
    else:
        n = ad.value(d2).size
    return (ad.sum(total) if traced else total.sum()) * (1.0 / n)


def mmd2_unbiased(xs, ys, bandwidths=(1.0,)):
    """Unbiased U-statistic estimate of MMD^2; differentiable when given Vars."""
    _check(xs, ys)
    n, m = len(ad.value(xs)), len(ad.value(ys))
    off_x = 1.0 - np.eye(n)
    off_y = 1.0 - np.eye(m)
    kxx = _kernel_mean(_sq_dists(xs, xs), bandwidths, off_x)
    kyy = _kernel_mean(_sq_dists(ys, ys), bandwidths, off_y)
    kxy = _kernel_mean(_sq_dists(xs, ys), bandwidths)
    return kxx + kyy - 2.0 * kxy


def rbf_mmd(xs: np.ndarray, ys: np.ndarray, bandwidths=(1.0,)) -> float:
    """MMD^2 between two sample batches, clamped at zero for reporting.

    The kernel is the average of ``exp(-|x-y|^2 / (2 bw^2))`` over the
    given bandwidths.
    """
    est = mmd2_unbiased(np.asarray(xs, float), np.asarray(ys, float), tuple(bandwidths))
    return max(float(est), 0.0)
