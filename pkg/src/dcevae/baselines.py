"""Single-latent baselines: CEVAE, mCEVAE and CVAE.

All three use one latent ``u`` of width ``latent_d + latent_r`` (capacity
matched to DCEVAE) and expose the same inference surface as
:class:`dcevae.model.Dcevae`: ``abduct_joint``, ``outcome_prob`` and
``generate_x``. Their counterfactuals regenerate every feature, x_r included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data.schema import TabularDataset
from .nets import (
    Batch,
    GaussianHead,
    VaeModel,
    bernoulli_loglik,
    gaussian_loglik,
    kl_std_normal,
)
from .numerics import Mlp, Rng, ShapeError, Tape, Var, mmd2_unbiased
from .numerics import autodiff as ad


@dataclass
class Posterior:
    mu: np.ndarray
    sigma: np.ndarray
    u: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        return self.u


class _SingleLatent(VaeModel):
    encoder_uses_y = True

    @property
    def latent_dim(self) -> int:
        return self.nets["enc"].mu.out_dim

    def _enc_input(self, batch: Batch) -> np.ndarray:
        if batch.xd.shape[1] != self.xd_dim or batch.xr.shape[1] != self.xr_dim:
            raise ShapeError(
                f"batch widths x_d={batch.xd.shape[1]}, x_r={batch.xr.shape[1]}; "
                f"model expects {self.xd_dim}, {self.xr_dim}"
            )
        cols = [batch.a, batch.x]
        if self.encoder_uses_y:
            cols.append(batch.y)
        return np.hstack(cols)

    def encode(self, batch: Batch, rng: Rng | None = None, eps=None) -> Posterior:
        mu, sigma = self.nets["enc"](self._enc_input(batch))
        if eps is None and rng is not None:
            eps = rng.normal(mu.shape)
        return Posterior(mu, sigma, mu if eps is None else mu + sigma * eps)

    def abduct_joint(self, batch: Batch, rng: Rng | None = None) -> np.ndarray:
        return self.encode(batch, rng).u

    def _check_latent(self, u: np.ndarray) -> None:
        if u.ndim != 2 or u.shape[1] != self.latent_dim:
            raise ShapeError(f"latent shape {u.shape}, expected (*, {self.latent_dim})")

    def split_x(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[:, : self.xd_dim], x[:, self.xd_dim:]

    def trace_posterior(self, tape: Tape, batch: Batch, eps: np.ndarray):
        mu, sigma = self.nets["enc"].trace(tape, self._enc_input(batch))
        return mu, sigma, mu + sigma * eps


class Cvae(_SingleLatent):
    """Conditional VAE: q(u | a, x, y), p(x | a, u), p(y | a, u)."""

    variant = "cvae"
    model_nets = ("enc", "dec_x", "dec_y")

    @classmethod
    def init(cls, ds: TabularDataset, config: TrainConfig) -> "Cvae":
        rng = Rng(config.seed).child(0)
        L, h = config.latent_total, list(config.hidden)
        p = ds.xd.shape[1] + ds.xr.shape[1]
        enc_in = 1 + p + (1 if cls.encoder_uses_y else 0)
        nets = {
            "enc": GaussianHead.init(enc_in, h, L, rng),
            "dec_x": GaussianHead.init(1 + L, h, p, rng),
            "dec_y": Mlp.init([1 + L, *h, 1], rng, "sigmoid"),
        }
        return cls(nets, ds.partition, ds.encodings, config)

    def outcome_prob(self, a, u: np.ndarray) -> np.ndarray:
        self._check_latent(u)
        a = np.asarray(a, float).reshape(-1, 1)
        return self.nets["dec_y"](np.hstack([a, u]))[:, 0]

    def generate_x(self, a, u: np.ndarray, batch: Batch | None = None, counterfactual=False):
        self._check_latent(u)
        a = np.asarray(a, float).reshape(-1, 1)
        return self.split_x(self.nets["dec_x"].mu(np.hstack([a, u])))

    def trace_recon(self, tape: Tape, batch: Batch, u: Var) -> dict:
        au = ad.concat([tape.constant(batch.a), u])
        x_mu, x_sigma = self.nets["dec_x"].trace(tape, au)
        y_logit = self.nets["dec_y"].logits(tape, au)
        return {
            "recon_x": ad.mean(gaussian_loglik(batch.x, x_mu, x_sigma)),
            "recon_y": ad.mean(bernoulli_loglik(batch.y, y_logit)),
        }

    def base_loss(self, tape: Tape, batch: Batch, eps: np.ndarray) -> tuple[Var, dict, Var]:
        """-(lambda_x log p(x) + lambda_y log p(y)) + KL(q || p), plus the traced latent."""
        cfg = self.config
        mu, sigma, u = self.trace_posterior(tape, batch, eps)
        parts = self.trace_recon(tape, batch, u)
        parts["kl"] = ad.mean(kl_std_normal(mu, sigma))
        total = -(cfg.lambda_x * parts["recon_x"] + cfg.lambda_y * parts["recon_y"]) + parts["kl"]
        return total, parts, u

    def model_loss(self, tape: Tape, batch: Batch, rng: Rng, eps=None) -> tuple[Var, dict]:
        eps = rng.normal((len(batch), self.latent_dim)) if eps is None else eps
        total, parts, _ = self.base_loss(tape, batch, eps)
        parts["total"] = total
        return total, {k: float(v.value) for k, v in parts.items()}


class Mcevae(Cvae):
    """CVAE with encoder q(u | a, x) and MMD penalties pulling q(u) and each q(u | a=k) to N(0, I)."""

    variant = "mcevae"
    encoder_uses_y = False

    def model_loss(self, tape: Tape, batch: Batch, rng: Rng, eps=None, prior=None) -> tuple[Var, dict]:
        cfg = self.config
        n, L = len(batch), self.latent_dim
        eps = rng.normal((n, L)) if eps is None else eps
        prior = rng.normal((n, L)) if prior is None else prior
        total, parts, u = self.base_loss(tape, batch, eps)
        bw = tuple(cfg.mmd_bandwidths)
        if cfg.lambda_1 > 0:
            parts["mmd"] = mmd2_unbiased(u, prior, bw)
            total = total + cfg.lambda_1 * parts["mmd"]
        if cfg.lambda_2 > 0:
            mmd_a = None
            for k in (0.0, 1.0):
                rows = np.flatnonzero(batch.a[:, 0] == k)
                if len(rows) < 2:
                    continue
                term = mmd2_unbiased(ad.take_rows(u, rows), prior[rows], bw)
                mmd_a = term if mmd_a is None else mmd_a + term
            if mmd_a is not None:
                parts["mmd_a"] = mmd_a
                total = total + cfg.lambda_2 * mmd_a
        parts["total"] = total
        return total, {k: float(v.value) for k, v in parts.items()}


class Cevae(_SingleLatent):
    """CEVAE with twin decoders f_{a=0}, f_{a=1} for (x, y), p(a | u) and auxiliary heads.

    Each record's likelihood is routed through the decoder of its own ``a``,
    so that decoder alone receives its gradient.
    """

    variant = "cevae"
    model_nets = ("enc", "dec_a", "dec_x0", "dec_x1", "dec_y0", "dec_y1", "aux_a", "aux_y")

    @classmethod
    def init(cls, ds: TabularDataset, config: TrainConfig) -> "Cevae":
        rng = Rng(config.seed).child(0)
        L, h = config.latent_total, list(config.hidden)
        p = ds.xd.shape[1] + ds.xr.shape[1]
        nets = {
            "enc": GaussianHead.init(1 + p + 1, h, L, rng),
            "dec_a": Mlp.init([L, *h, 1], rng, "sigmoid"),
            "dec_x0": GaussianHead.init(L, h, p, rng),
            "dec_x1": GaussianHead.init(L, h, p, rng),
            "dec_y0": Mlp.init([L, *h, 1], rng, "sigmoid"),
            "dec_y1": Mlp.init([L, *h, 1], rng, "sigmoid"),
            "aux_a": Mlp.init([p, *h, 1], rng, "sigmoid"),
            "aux_y": Mlp.init([p + 1, *h, 1], rng, "sigmoid"),
        }
        return cls(nets, ds.partition, ds.encodings, config)

    def outcome_prob(self, a, u: np.ndarray) -> np.ndarray:
        self._check_latent(u)
        a = np.asarray(a, float).reshape(-1)
        return np.where(a == 1, self.nets["dec_y1"](u)[:, 0], self.nets["dec_y0"](u)[:, 0])

    def generate_x(self, a, u: np.ndarray, batch: Batch | None = None, counterfactual=False):
        self._check_latent(u)
        a = np.asarray(a, float).reshape(-1, 1)
        x = np.where(a == 1, self.nets["dec_x1"].mu(u), self.nets["dec_x0"].mu(u))
        return self.split_x(x)

    def model_loss(self, tape: Tape, batch: Batch, rng: Rng, eps=None) -> tuple[Var, dict]:
        n = len(batch)
        eps = rng.normal((n, self.latent_dim)) if eps is None else eps
        mu, sigma, u = self.trace_posterior(tape, batch, eps)
        is1 = batch.a == 1
        x_mu0, x_sigma0 = self.nets["dec_x0"].trace(tape, u)
        x_mu1, x_sigma1 = self.nets["dec_x1"].trace(tape, u)
        x_mu = ad.where(is1, x_mu1, x_mu0)
        x_sigma = ad.where(is1, x_sigma1, x_sigma0)
        y_logit = ad.where(is1, self.nets["dec_y1"].logits(tape, u), self.nets["dec_y0"].logits(tape, u))
        a_logit = self.nets["dec_a"].logits(tape, u)
        aux_a = self.nets["aux_a"].logits(tape, batch.x)
        aux_y = self.nets["aux_y"].logits(tape, np.hstack([batch.x, batch.a]))
        parts = {
            "recon_x": ad.mean(gaussian_loglik(batch.x, x_mu, x_sigma)),
            "recon_a": ad.mean(bernoulli_loglik(batch.a, a_logit)),
            "recon_y": ad.mean(bernoulli_loglik(batch.y, y_logit)),
            "kl": ad.mean(kl_std_normal(mu, sigma)),
            "aux_a": ad.mean(bernoulli_loglik(batch.a, aux_a)),
            "aux_y": ad.mean(bernoulli_loglik(batch.y, aux_y)),
        }
        total = (-(parts["recon_x"] + parts["recon_a"] + parts["recon_y"]) + parts["kl"]
                 - (parts["aux_a"] + parts["aux_y"]))
        parts["total"] = total
        out = {k: float(v.value) for k, v in parts.items()}
        out["dec1_share"] = float(is1.mean())
        return total, out


VARIANT_CLASSES = {"cevae": Cevae, "mcevae": Mcevae, "cvae": Cvae}


def train_cevae(model: Cevae, ds: TabularDataset) -> list[dict]:
    return model.fit(ds)


def train_mcevae(model: Mcevae, ds: TabularDataset) -> list[dict]:
    return model.fit(ds)
