"""Abduction, action, prediction; counterfactual datasets; fair training sets."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.io import save_dataset
from .data.schema import TabularDataset
from .nets import Batch, VaeModel
from .numerics import Rng

MODES = ("mean", "sample")


def abduct(model: VaeModel, ds: TabularDataset, mode: str = "mean", k: int = 32,
           rng: Rng | None = None, allow_untrained: bool = False) -> np.ndarray:
    """Latents inferred from the evidence (a, x, y), shaped ``(draws, n, latent)``.

    ``mean`` returns the posterior mean (one draw); ``sample`` returns ``k``
    reparameterized draws per record.
    """
    model._require_trained(allow_untrained)
    model.check_dataset(ds)
    batch = Batch.of(ds)
    if mode == "mean":
        return model.abduct_joint(batch)[None]
    if mode != "sample":
        raise ValueError(f"unknown abduction mode {mode!r}; expected one of {MODES}")
    if k < 1:
        raise ValueError("k must be positive")
    rng = rng if rng is not None else Rng(model.config.seed).child(2)
    return np.stack([model.abduct_joint(batch, rng) for _ in range(k)])


@dataclass
class CounterfactualRecords:
    """Factual records and their counterfactual twins under the negated a."""

    a: np.ndarray
    a_cf: np.ndarray
    xd: np.ndarray
    xr: np.ndarray
    y: np.ndarray
    latents: np.ndarray       # (draws, n, latent)
    y_prob: np.ndarray        # p(y=1 | a, u), averaged over draws
    y_prob_cf: np.ndarray     # p(y=1 | not a, u)
    xd_cf: np.ndarray
    xr_cf: np.ndarray

    def __len__(self):
        return len(self.a)


def predict(model: VaeModel, latents: np.ndarray, a: np.ndarray, ds: TabularDataset | None = None,
            counterfactual: bool = False):
    """Outcome probability and generated (x_d, x_r) under ``a`` for every latent draw, averaged."""
    batch = Batch.of(ds) if ds is not None else None
    probs, xds, xrs = [], [], []
    for joint in latents:
        probs.append(model.outcome_prob(a, joint))
        xd, xr = model.generate_x(a, joint, batch, counterfactual=counterfactual)
        xds.append(xd)
        xrs.append(xr)
    return np.mean(probs, axis=0), np.mean(xds, axis=0), np.mean(xrs, axis=0)


def counterfactual_predict(model: VaeModel, ds: TabularDataset, mode: str = "mean", k: int = 32,
                           rng: Rng | None = None, latents: np.ndarray | None = None,
                           allow_untrained: bool = False) -> CounterfactualRecords:
    if latents is None:
        latents = abduct(model, ds, mode, k, rng, allow_untrained)
    a = ds.a
    a_cf = 1.0 - a
    y_prob = np.mean([model.outcome_prob(a, j) for j in latents], axis=0)
    y_prob_cf, xd_cf, xr_cf = predict(model, latents, a_cf, ds, counterfactual=True)
    return CounterfactualRecords(a, a_cf, ds.xd, ds.xr, ds.y, latents, y_prob, y_prob_cf, xd_cf, xr_cf)


def counterfactual_dataset(ds: TabularDataset, records: CounterfactualRecords) -> TabularDataset:
    """The counterfactual twins as a dataset, y thresholded at 0.5."""
    y = (records.y_prob_cf >= 0.5).astype(float)
    return ds.with_features(a=records.a_cf, xd=records.xd_cf, xr=records.xr_cf, y=y)


def export_counterfactuals(ds: TabularDataset, records: CounterfactualRecords,
                           directory, name: str = "counterfactual") -> list[Path]:
    cf = counterfactual_dataset(ds, records)
    return save_dataset(cf, directory, name, extra={
        "counterfactual_of": np.arange(len(ds)),
        "y_prob_cf": records.y_prob_cf,
    })


def fairness_gap(model: VaeModel, ds: TabularDataset, allow_untrained: bool = False) -> float:
    """Mean |p(y | a, u) - p(y | not a, u)| over the dataset with posterior-mean latents."""
    joint = abduct(model, ds, "mean", allow_untrained=allow_untrained)[0]
    return float(np.mean(np.abs(model.outcome_prob(ds.a, joint) - model.outcome_prob(1.0 - ds.a, joint))))


@dataclass
class FairGenSet:
    """Decoder samples under (a, u) followed by their (not a, u) twins."""

    dataset: TabularDataset
    source_index: np.ndarray
    flipped: np.ndarray       # 0 for the factual-a generation, 1 for the negated one

    def __len__(self):
        return len(self.dataset)


def _sample_decoders(model, a, joint, noise_d, noise_r, uniform):
    """One draw of (x_d, x_r, y) from the decoders with externally supplied noise."""
    xd_mu, xr_mu = model.generate_x(a, joint)
    xd_sigma, xr_sigma = decoder_sigmas(model, a, joint)
    p = model.outcome_prob(a, joint)
    return xd_mu + xd_sigma * noise_d, xr_mu + xr_sigma * noise_r, (uniform < p).astype(float)


def decoder_sigmas(model, a, joint):
    """Decoder standard deviations for (x_d, x_r)."""
    a_col = np.asarray(a, float).reshape(-1, 1)
    if model.variant == "dcevae":
        u_d, u_r = model.split_joint(joint)
        return model.nets["dec_xd"](np.hstack([a_col, u_d]))[1], model.nets["dec_xr"](u_r)[1]
    if model.variant == "cevae":
        s = np.where(a_col == 1, model.nets["dec_x1"](joint)[1], model.nets["dec_x0"](joint)[1])
    else:
        s = model.nets["dec_x"](np.hstack([a_col, joint]))[1]
    return model.split_x(s)


def build_fair_training_set(model: VaeModel, ds: TabularDataset, rng: Rng,
                            allow_untrained: bool = False) -> FairGenSet:
    """Pairs of generations per source record, one under a and one under not-a.

    Both members of a pair share the latent draw and every decoder noise draw,
    so whatever does not depend on a (x_r for DCEVAE) is identical across the pair.
    """
    model._require_trained(allow_untrained)
    joint = abduct(model, ds, "sample", k=1, rng=rng, allow_untrained=allow_untrained)[0]
    n = len(ds)
    noise_d = rng.normal((n, model.xd_dim))
    noise_r = rng.normal((n, model.xr_dim))
    uniform = rng.uniform(size=n)
    parts = []
    for a in (ds.a, 1.0 - ds.a):
        xd, xr, y = _sample_decoders(model, a, joint, noise_d, noise_r, uniform)
        parts.append((a, xd, xr, y))
    a = np.concatenate([p[0] for p in parts])
    xd = np.vstack([p[1] for p in parts])
    xr = np.vstack([p[2] for p in parts])
    y = np.concatenate([p[3] for p in parts])
    gen = ds.with_features(a=a, xd=xd, xr=xr, y=y)
    return FairGenSet(gen, np.tile(np.arange(n), 2), np.repeat([0, 1], n))


def generate_dataset(model: VaeModel, ds: TabularDataset, rng: Rng | None = None,
                     allow_untrained: bool = False) -> TabularDataset:
    """Reconstruction of ``ds`` through the model under the factual a.

    With an ``rng`` the decoders are sampled; otherwise decoder means are used
    and y is thresholded at 0.5.
    """
    model._require_trained(allow_untrained)
    if rng is None:
        joint = abduct(model, ds, "mean", allow_untrained=allow_untrained)[0]
        xd, xr = model.generate_x(ds.a, joint)
        y = (model.outcome_prob(ds.a, joint) >= 0.5).astype(float)
        return ds.with_features(xd=xd, xr=xr, y=y)
    joint = abduct(model, ds, "sample", k=1, rng=rng, allow_untrained=allow_untrained)[0]
    n = len(ds)
    xd, xr, y = _sample_decoders(model, ds.a, joint, rng.normal((n, model.xd_dim)),
                                 rng.normal((n, model.xr_dim)), rng.uniform(size=n))
    return ds.with_features(xd=xd, xr=xr, y=y)
