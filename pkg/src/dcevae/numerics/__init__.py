"""Dense numerics: reverse-mode tape, MLPs, Adam, seeded sampling, MMD."""

from . import autodiff
from .autodiff import Gradients, ShapeError, Tape, Var
from .kernels import mmd2_unbiased, rbf_mmd
from .mlp import Mlp, backward, mlp_apply
from .optim import AdamState, NumericalError, adam_step
from .random import Rng, gaussian_sample

__all__ = [
    "AdamState",
    "Gradients",
    "Mlp",
    "NumericalError",
    "Rng",
    "ShapeError",
    "Tape",
    "Var",
    "adam_step",
    "autodiff",
    "backward",
    "gaussian_sample",
    "mlp_apply",
    "mmd2_unbiased",
    "rbf_mmd",
]
