"""Building blocks shared by DCEVAE and the baseline VAEs.

Heads, log-likelihoods, minibatching, the parameter-group/Adam bookkeeping
and checkpoint (de)serialization live here; each variant only supplies its
networks and its loss.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import TrainConfig
from .data.schema import AttributePartition, ColumnEncoding, TabularDataset
from .numerics import AdamState, Mlp, NumericalError, Rng, Tape, Var, adam_step
from .numerics import autodiff as ad

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
LOG_SIGMA_FLOOR = math.log(SIGMA_FLOOR)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Batch(NamedTuple):
    a: np.ndarray   # (n, 1)
    xd: np.ndarray
    xr: np.ndarray
    y: np.ndarray   # (n, 1)

    @classmethod
    def of(cls, ds: TabularDataset, index=None) -> "Batch":
        if index is None:
            return cls(ds.a[:, None], ds.xd, ds.xr, ds.y[:, None])
        return cls(ds.a[index, None], ds.xd[index], ds.xr[index], ds.y[index, None])

    @property
    def x(self) -> np.ndarray:
        return np.hstack([self.xd, self.xr])

    def __len__(self):
        return len(self.a)


@dataclass
class GaussianHead:
    """A (mean, log-std) pair of networks over the same input."""

    mu: Mlp
    log_sigma: Mlp

    @classmethod
    def init(cls, in_dim: int, hidden, out_dim: int, rng) -> "GaussianHead":
        dims = [in_dim, *hidden, out_dim]
        return cls(Mlp.init(dims, rng), Mlp.init(dims, rng))

    def trace(self, tape: Tape, x) -> tuple[Var, Var]:
        mu = self.mu.trace(tape, x)
        log_sigma = self.log_sigma.trace(tape, x)
        _warn_floor(log_sigma.value)
        return mu, ad.exp(ad.clip_min(log_sigma, LOG_SIGMA_FLOOR))

    def __call__(self, x) -> tuple[np.ndarray, np.ndarray]:
        log_sigma = self.log_sigma(x)
        _warn_floor(log_sigma)
        return self.mu(x), np.exp(np.maximum(log_sigma, LOG_SIGMA_FLOOR))

    def parameters(self) -> list[np.ndarray]:
        return self.mu.parameters() + self.log_sigma.parameters()

    def to_dict(self) -> dict:
        return {"mu": self.mu.to_dict(), "log_sigma": self.log_sigma.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "GaussianHead":
        return cls(Mlp.from_dict(d["mu"]), Mlp.from_dict(d["log_sigma"]))


def _warn_floor(log_sigma: np.ndarray) -> None:
    n = int(np.sum(log_sigma < LOG_SIGMA_FLOOR))
    if n:
        log.debug("sigma floored at %g for %d entries", SIGMA_FLOOR, n)


# ---------------------------------------------------------------------------
# log-likelihoods and KL, all returning per-record columns of shape (n, 1)


def gaussian_loglik(x: np.ndarray, mu: Var, sigma: Var) -> Var:
    z = (x - mu) / sigma
    per = -HALF_LOG_2PI - ad.log(sigma) - 0.5 * ad.square(z)
    return ad.sum(per, axis=1, keepdims=True)


def bernoulli_loglik(y: np.ndarray, logits: Var) -> Var:
    per = y * ad.log_sigmoid(logits) + (1.0 - y) * ad.log_sigmoid(-logits)
    return ad.sum(per, axis=1, keepdims=True)


def kl_std_normal(mu: Var, sigma: Var) -> Var:
    """KL(N(mu, diag sigma^2) || N(0, I)) per record."""
    per = 0.5 * (ad.square(mu) + ad.square(sigma) - 1.0) - ad.log(sigma)
    return ad.sum(per, axis=1, keepdims=True)


def kl_std_normal_np(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.sum(0.5 * (mu**2 + sigma**2 - 1.0) - np.log(sigma), axis=1)


def check_finite(components: dict, where: str) -> None:
    for name, v in components.items():
        if not np.isfinite(v):
            raise NumericalError(f"non-finite {name} loss ({v}) {where}")


# ---------------------------------------------------------------------------


class ParamGroup:
    """A set of networks updated together by one Adam optimizer."""

    def __init__(self, model: "VaeModel", names: list[str], lr: float):
        self.names = list(names)
        self.arrays: list[np.ndarray] = []
        self.labels: list[str] = []
        for name in self.names:
            for i, arr in enumerate(model.net_parameters(name)):
                self.arrays.append(arr)
                self.labels.append(f"{name}[{i}]")
        self.state = AdamState.for_params(self.arrays, lr=lr)

    def step(self, grads: ad.Gradients) -> None:
        adam_step(self.arrays, grads.wrt(self.arrays), self.state, self.labels)


class VaeModel:
    """Common container: networks, data schema, config and training loop."""

    variant = ""
    model_nets: tuple[str, ...] = ()
    disc_nets: tuple[str, ...] = ()

    def __init__(self, nets: dict, partition: AttributePartition, encodings,
                 config: TrainConfig, trained: bool = False):
        self.nets = nets
        self.partition = partition
        self.encodings = tuple(encodings)
        self.config = config
        self.trained = trained

    # -- schema -----------------------------------------------------------

    @property
    def xd_dim(self) -> int:
        return sum(e.width for e in self.encodings[: len(self.partition.descendants)])

    @property
    def xr_dim(self) -> int:
        return sum(e.width for e in self.encodings[len(self.partition.descendants):])

    def check_dataset(self, ds: TabularDataset) -> None:
        if ds.partition != self.partition:
            raise ValueError("dataset partition does not match the model's partition")
        if ds.xd.shape[1] != self.xd_dim or ds.xr.shape[1] != self.xr_dim:
            raise ValueError(
                f"dataset widths ({ds.xd.shape[1]}, {ds.xr.shape[1]}) do not match the model "
                f"({self.xd_dim}, {self.xr_dim})"
            )

    def _require_trained(self, allow_untrained: bool) -> None:
        if not (self.trained or allow_untrained):
            raise RuntimeError(f"{self.variant} parameters are untrained")

    # -- parameters -------------------------------------------------------

    def net_parameters(self, name: str) -> list[np.ndarray]:
        return self.nets[name].parameters()

    def parameters(self) -> list[np.ndarray]:
        out = []
        for name in sorted(self.nets):
            out.extend(self.net_parameters(name))
        return out

    # -- training ---------------------------------------------------------

    def model_loss(self, tape: Tape, batch: Batch, rng: Rng) -> tuple[Var, dict]:
        raise NotImplementedError

    def train_step(self, batch: Batch, rng: Rng, groups: dict) -> dict:
        tape = Tape()
        total, parts = self.model_loss(tape, batch, rng)
        check_finite(parts, "in model step")
        groups["model"].step(tape.backward(total))
        return parts

    def make_groups(self) -> dict:
        groups = {"model": ParamGroup(self, list(self.model_nets), self.config.lr)}
        if self.disc_nets:
            groups["disc"] = ParamGroup(self, list(self.disc_nets), self.config.disc_lr)
        return groups

    def fit(self, ds: TabularDataset, epochs: int | None = None, callback=None) -> list[dict]:
        """Minibatch training; returns one dict of mean loss components per epoch."""
        self.check_dataset(ds)
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        rng = Rng(cfg.seed).child(1)
        groups = self.make_groups()
        n = len(ds)
        if n < 2:
            raise ValueError("training needs at least two records")
        history = []
        for epoch in range(1, epochs + 1):
            order = rng.permutation(n)
            sums: dict = {}
            count = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                if len(idx) < 2:
                    continue
                try:
                    parts = self.train_step(Batch.of(ds, idx), rng, groups)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}: {exc}") from None
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v * len(idx)
                count += len(idx)
            row = {"epoch": epoch, **{k: v / count for k, v in sums.items()}}
            history.append(row)
            log.info("%s epoch %d: %s", self.variant, epoch,
                     " ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
            if callback is not None:
                callback(row)
        self.trained = True
        return history

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "trained": self.trained,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "partition": self.partition.to_dict(),
            "encodings": [e.to_dict() for e in self.encodings],
            "nets": {k: self.nets[k].to_dict() for k in sorted(self.nets)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VaeModel":
        nets = {}
        for k, v in d["nets"].items():
            nets[k] = GaussianHead.from_dict(v) if "mu" in v else Mlp.from_dict(v)
        return cls(
            nets,
            AttributePartition.from_dict(d["partition"]),
            [ColumnEncoding.from_dict(e) for e in d["encodings"]],
            TrainConfig.from_dict(d["config"]),
            trained=d.get("trained", False),
        )


def save_checkpoint(model: VaeModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> VaeModel:
    from .baselines import Cevae, Cvae, Mcevae
    from .model import Dcevae

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    d = json.loads(path.read_text())
    classes = {c.variant: c for c in (Dcevae, Cevae, Mcevae, Cvae)}
    try:
        cls = classes[d["variant"]]
    except KeyError:
        raise ValueError(f"{path}: unknown variant {d.get('variant')!r}") from None
    return cls.from_dict(d)


def make_model(ds: TabularDataset, config: TrainConfig) -> VaeModel:
    """Freshly initialized model of ``config.variant`` sized for ``ds``."""
    from .baselines import VARIANT_CLASSES
    from .model import Dcevae

    cls = Dcevae if config.variant == "dcevae" else VARIANT_CLASSES[config.variant]
    return cls.init(ds, config)
