"""Disentangled causal-effect VAE.

Two latent blocks: ``u_d`` (exogenous noise of the descendants of ``a``) and
``u_r`` (noise of the remaining features, free to correlate with ``a``).

    encoder   q(u_d | a, x_d, y) q(u_r | a, x_r, y)
    decoder   p(x_d | a, u_d) p(x_r | u_r) p(y | a, u_d, u_r)

A discriminator over ``(a, u_d, u_r)`` estimates the total correlation
between ``u_d`` and ``(a, u_r)`` by the density-ratio trick; the encoder and
decoders minimize the negative ELBO plus ``beta_tc`` times that estimate
(plus ``beta_f`` times the counterfactual-fairness gap), while the
discriminator is trained to separate joint samples from samples whose
``u_d`` is permuted across the batch.
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
    check_finite,
    gaussian_loglik,
    kl_std_normal,
)
from .numerics import Mlp, Rng, ShapeError, Tape, Var
from .numerics import autodiff as ad


@dataclass
class LatentPosterior:
    mu_d: np.ndarray
    sigma_d: np.ndarray
    mu_r: np.ndarray
    sigma_r: np.ndarray
    u_d: np.ndarray
    u_r: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        """Samples laid out as [u_r, u_d]."""
        return np.hstack([self.u_r, self.u_d])

    @property
    def joint_mean(self) -> np.ndarray:
        return np.hstack([self.mu_r, self.mu_d])


@dataclass
class LossBreakdown:
    recon_xd: float = 0.0   # log-likelihoods (higher is better)
    recon_xr: float = 0.0
    recon_y: float = 0.0
    kl_d: float = 0.0
    kl_r: float = 0.0
    tc: float = 0.0
    disc: float = 0.0       # discriminator objective (maximized)
    fair: float = 0.0
    total: float = 0.0      # minimized: -(weighted recon) + kl + beta_tc tc + beta_f fair

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class Dcevae(VaeModel):
    variant = "dcevae"
    model_nets = ("enc_d", "enc_r", "dec_xd", "dec_xr", "dec_y")
    disc_nets = ("disc",)

    @classmethod
    def init(cls, ds: TabularDataset, config: TrainConfig) -> "Dcevae":
        rng = Rng(config.seed).child(0)
        m, n, h = config.latent_d, config.latent_r, list(config.hidden)
        p_d, p_r = ds.xd.shape[1], ds.xr.shape[1]
        nets = {
            "enc_d": GaussianHead.init(1 + p_d + 1, h, m, rng),
            "enc_r": GaussianHead.init(1 + p_r + 1, h, n, rng),
            "dec_xd": GaussianHead.init(1 + m, h, p_d, rng),
            "dec_xr": GaussianHead.init(n, h, p_r, rng),
            "dec_y": Mlp.init([1 + m + n, *h, 1], rng, "sigmoid"),
            "disc": Mlp.init([1 + m + n, *config.disc_hidden, 1], rng, "sigmoid"),
        }
        return cls(nets, ds.partition, ds.encodings, config)

    @property
    def m(self) -> int:
        return self.nets["dec_xd"].mu.in_dim - 1

    @property
    def n(self) -> int:
        return self.nets["dec_xr"].mu.in_dim

    # -- inference --------------------------------------------------------

    def _check_batch(self, batch: Batch) -> None:
        if batch.xd.shape[1] != self.xd_dim or batch.xr.shape[1] != self.xr_dim:
            raise ShapeError(
                f"batch widths x_d={batch.xd.shape[1]}, x_r={batch.xr.shape[1]}; "
                f"model expects {self.xd_dim}, {self.xr_dim}"
            )

    def encode(self, batch: Batch, rng: Rng | None = None, eps=None) -> LatentPosterior:
        """Posterior parameters and one reparameterized draw (the mean if no rng/eps)."""
        self._check_batch(batch)
        mu_d, sigma_d = self.nets["enc_d"](np.hstack([batch.a, batch.xd, batch.y]))
        mu_r, sigma_r = self.nets["enc_r"](np.hstack([batch.a, batch.xr, batch.y]))
        if eps is None and rng is not None:
            eps = (rng.normal(mu_d.shape), rng.normal(mu_r.shape))
        if eps is None:
            u_d, u_r = mu_d, mu_r
        else:
            u_d, u_r = mu_d + sigma_d * eps[0], mu_r + sigma_r * eps[1]
        return LatentPosterior(mu_d, sigma_d, mu_r, sigma_r, u_d, u_r)

    def split_joint(self, joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """[u_r, u_d] -> (u_d, u_r)."""
        if joint.shape[1] != self.m + self.n:
            raise ShapeError(f"latent width {joint.shape[1]}, expected {self.m + self.n}")
        return joint[:, self.n:], joint[:, : self.n]

    def decode(self, a, u_d, u_r):
        a = np.asarray(a, float).reshape(-1, 1)
        if u_d.shape[1] != self.m or u_r.shape[1] != self.n:
            raise ShapeError(f"latent widths ({u_d.shape[1]}, {u_r.shape[1]}), expected ({self.m}, {self.n})")
        xd_mu, xd_sigma = self.nets["dec_xd"](np.hstack([a, u_d]))
        xr_mu, xr_sigma = self.nets["dec_xr"](u_r)
        y_prob = self.nets["dec_y"](np.hstack([a, u_d, u_r]))[:, 0]
        return xd_mu, xd_sigma, xr_mu, xr_sigma, y_prob

    # interface shared with the baselines (joint latent = [u_r, u_d])

    def abduct_joint(self, batch: Batch, rng: Rng | None = None) -> np.ndarray:
        return self.encode(batch, rng).joint

    def outcome_prob(self, a, joint: np.ndarray) -> np.ndarray:
        u_d, u_r = self.split_joint(joint)
        a = np.asarray(a, float).reshape(-1, 1)
        return self.nets["dec_y"](np.hstack([a, u_d, u_r]))[:, 0]

    def generate_x(self, a, joint: np.ndarray, batch: Batch | None = None, counterfactual=False):
        """Decoder means for (x_d, x_r); a counterfactual keeps the observed x_r verbatim."""
        u_d, u_r = self.split_joint(joint)
        a = np.asarray(a, float).reshape(-1, 1)
        xd = self.nets["dec_xd"].mu(np.hstack([a, u_d]))
        if counterfactual and batch is not None:
            return xd, batch.xr.copy()
        return xd, self.nets["dec_xr"].mu(u_r)

    # -- traced losses ----------------------------------------------------

    def trace_encode(self, tape: Tape, batch: Batch, eps) -> tuple[Var, ...]:
        self._check_batch(batch)
        mu_d, sigma_d = self.nets["enc_d"].trace(tape, np.hstack([batch.a, batch.xd, batch.y]))
        mu_r, sigma_r = self.nets["enc_r"].trace(tape, np.hstack([batch.a, batch.xr, batch.y]))
        u_d = mu_d + sigma_d * eps[0]
        u_r = mu_r + sigma_r * eps[1]
        return mu_d, sigma_d, mu_r, sigma_r, u_d, u_r

    def trace_elbo(self, tape: Tape, batch: Batch, enc) -> dict:
        """Per-batch means of the ELBO pieces (recon terms as log-likelihoods)."""
        mu_d, sigma_d, mu_r, sigma_r, u_d, u_r = enc
        a = batch.a
        xd_mu, xd_sigma = self.nets["dec_xd"].trace(tape, ad.concat([tape.constant(a), u_d]))
        xr_mu, xr_sigma = self.nets["dec_xr"].trace(tape, u_r)
        y_logit = self.nets["dec_y"].logits(tape, ad.concat([tape.constant(a), u_d, u_r]))
        return {
            "recon_xd": ad.mean(gaussian_loglik(batch.xd, xd_mu, xd_sigma)),
            "recon_xr": ad.mean(gaussian_loglik(batch.xr, xr_mu, xr_sigma)),
            "recon_y": ad.mean(bernoulli_loglik(batch.y, y_logit)),
            "kl_d": ad.mean(kl_std_normal(mu_d, sigma_d)),
            "kl_r": ad.mean(kl_std_normal(mu_r, sigma_r)),
        }

    def trace_disc_logits(self, tape: Tape, a: np.ndarray, u_d, u_r) -> Var:
        if not isinstance(u_d, Var):
            u_d = tape.constant(u_d)
        if not isinstance(u_r, Var):
            u_r = tape.constant(u_r)
        return self.nets["disc"].logits(tape, ad.concat([tape.constant(a), u_d, u_r]))

    def trace_tc(self, tape: Tape, a: np.ndarray, u_d, u_r) -> Var:
        """Density-ratio estimate of TC: mean log(D / (1 - D)) = mean logit on joint samples."""
        return ad.mean(self.trace_disc_logits(tape, a, u_d, u_r))

    def trace_disc_objective(self, tape: Tape, a: np.ndarray, u_d, u_r, perm: np.ndarray) -> Var:
        """mean log D(joint) + mean log(1 - D(u_d permuted across records))."""
        joint = self.trace_disc_logits(tape, a, u_d, u_r)
        u_d_perm = ad.take_rows(u_d, perm) if isinstance(u_d, Var) else u_d[perm]
        shuffled = self.trace_disc_logits(tape, a, u_d_perm, u_r)
        return ad.mean(ad.log_sigmoid(joint)) + ad.mean(ad.log_sigmoid(-shuffled))

    def trace_fairness(self, tape: Tape, a: np.ndarray, u_d, u_r) -> Var:
        """mean |p(y | a, u) - p(y | not a, u)| (L2 norm of a scalar difference)."""
        p = ad.sigmoid(self.nets["dec_y"].logits(tape, ad.concat([tape.constant(a), u_d, u_r])))
        p_cf = ad.sigmoid(self.nets["dec_y"].logits(tape, ad.concat([tape.constant(1.0 - a), u_d, u_r])))
        return ad.mean(ad.abs(p - p_cf))

    def draw_eps(self, rng: Rng, n: int):
        return rng.normal((n, self.m)), rng.normal((n, self.n))

    def model_loss(self, tape: Tape, batch: Batch, rng: Rng, eps=None) -> tuple[Var, dict]:
        """Assembled objective for the encoder/decoders (discriminator weights held fixed)."""
        if len(batch) < 2:
            raise ValueError("the TC term needs a batch of at least two records")
        cfg = self.config
        eps = self.draw_eps(rng, len(batch)) if eps is None else eps
        enc = self.trace_encode(tape, batch, eps)
        u_d, u_r = enc[4], enc[5]
        parts = self.trace_elbo(tape, batch, enc)
        total = (-(cfg.w_xd * parts["recon_xd"] + cfg.w_xr * parts["recon_xr"] + cfg.w_y * parts["recon_y"])
                 + parts["kl_d"] + parts["kl_r"])
        if cfg.beta_tc > 0:
            parts["tc"] = self.trace_tc(tape, batch.a, u_d, u_r)
            total = total + cfg.beta_tc * parts["tc"]
        if cfg.beta_f > 0:
            parts["fair"] = self.trace_fairness(tape, batch.a, u_d, u_r)
            total = total + cfg.beta_f * parts["fair"]
        parts["total"] = total
        return total, {k: float(v.value) for k, v in parts.items()}

    def disc_loss(self, tape: Tape, a: np.ndarray, u_d: np.ndarray, u_r: np.ndarray,
                  perm: np.ndarray) -> Var:
        """Negated discriminator objective, minimized over the discriminator only."""
        return -self.trace_disc_objective(tape, a, u_d, u_r, perm)

    def train_step(self, batch: Batch, rng: Rng, groups: dict) -> dict:
        cfg = self.config
        eps = self.draw_eps(rng, len(batch))
        perm = rng.permutation(len(batch))
        parts = {}
        if cfg.beta_tc > 0:
            # max phase: only the discriminator moves, latents are fixed inputs
            post = self.encode(batch, eps=eps)
            dtape = Tape()
            d_loss = self.disc_loss(dtape, batch.a, post.u_d, post.u_r, perm)
            parts["disc"] = -float(d_loss.value)
            check_finite(parts, "in discriminator step")
            groups["disc"].step(dtape.backward(d_loss))
        # min phase: encoder/decoders move, discriminator frozen inside the TC term
        tape = Tape()
        total, model_parts = self.model_loss(tape, batch, rng, eps)
        check_finite(model_parts, "in model step")
        groups["model"].step(tape.backward(total))
        parts.update(model_parts)
        return LossBreakdown(**parts).as_dict()

    # -- evaluation helpers (numpy) ---------------------------------------

    def tc_loss(self, posterior: LatentPosterior, a, rng: Rng) -> tuple[float, float]:
        """(TC estimate, discriminator objective) for given latents."""
        a = np.asarray(a, float).reshape(-1, 1)
        if len(a) < 2:
            raise ValueError("tc_loss needs at least two records to permute")
        perm = rng.permutation(len(a))
        tape = Tape()
        tc = self.trace_tc(tape, a, posterior.u_d, posterior.u_r)
        obj = self.trace_disc_objective(tape, a, posterior.u_d, posterior.u_r, perm)
        return float(tc.value), float(obj.value)

    def fairness_loss(self, posterior: LatentPosterior, a) -> float:
        a = np.asarray(a, float).reshape(-1, 1)
        tape = Tape()
        return float(self.trace_fairness(tape, a, tape.constant(posterior.u_d),
                                         tape.constant(posterior.u_r)).value)

    def elbo(self, batch: Batch, posterior: LatentPosterior) -> LossBreakdown:
        """ELBO pieces evaluated at the posterior's drawn latents."""
        tape = Tape()
        enc = tuple(tape.constant(v) for v in (
            posterior.mu_d, posterior.sigma_d, posterior.mu_r, posterior.sigma_r,
            posterior.u_d, posterior.u_r))
        parts = {k: float(v.value) for k, v in self.trace_elbo(tape, batch, enc).items()}
        cfg = self.config
        total = (-(cfg.w_xd * parts["recon_xd"] + cfg.w_xr * parts["recon_xr"] + cfg.w_y * parts["recon_y"])
                 + parts["kl_d"] + parts["kl_r"])
        return LossBreakdown(**parts, total=total)


def train(model: Dcevae, ds: TabularDataset, config: TrainConfig | None = None) -> list[dict]:
    if config is not None:
        model.config = config
    return model.fit(ds)
