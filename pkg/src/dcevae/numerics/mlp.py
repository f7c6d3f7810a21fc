"""Fixed-architecture fully connected networks with tanh hidden units."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Var

ACTIVATIONS = ("linear", "sigmoid")


@dataclass
class Mlp:
    """Dense network ``layer_dims[0] -> ... -> layer_dims[-1]``.

    ``weights[i]`` has shape ``(layer_dims[i+1], layer_dims[i])``. Hidden
    layers use tanh; the last layer is linear or sigmoid.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "linear"
    hidden_activation: str = field(default="tanh", init=False)

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("an Mlp needs at least one layer")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("weights/biases do not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != want or b.shape != (want[0],):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {want} / {(want[0],)}"
                )

    @classmethod
    def init(cls, layer_dims, rng, output_activation="linear") -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases, output_activation)

    @classmethod
    def zeros(cls, layer_dims, output_activation="linear") -> "Mlp":
        return cls(
            list(layer_dims),
            [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
            [np.zeros(o) for o in layer_dims[1:]],
            output_activation,
        )

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def logits(self, tape: Tape, x) -> Var:
        """Trace the network up to (excluding) the output nonlinearity."""
        xv = ad.value(x)
        if xv.ndim != 2 or xv.shape[1] != self.in_dim:
            raise ShapeError(
                f"Mlp{self.layer_dims}: expected input of width {self.in_dim}, got shape {xv.shape}"
            )
        h = x if isinstance(x, Var) else tape.constant(xv)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ ad.transpose(tape.watch(w)) + tape.watch(b)
            if i < last:
                h = ad.tanh(h)
        return h

    def trace(self, tape: Tape, x) -> Var:
        z = self.logits(tape, x)
        return ad.sigmoid(z) if self.output_activation == "sigmoid" else z

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Untraced forward pass."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"Mlp{self.layer_dims}: expected input of width {self.in_dim}, got shape {x.shape}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.tanh(h)
        if self.output_activation == "sigmoid":
            h = ad._sigmoid(h)
        return h

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "output_activation": self.output_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(
            list(d["layer_dims"]),
            [np.array(w, dtype=float).reshape(o, i) for w, i, o in
             zip(d["weights"], d["layer_dims"][:-1], d["layer_dims"][1:])],
            [np.array(b, dtype=float) for b in d["biases"]],
            d["output_activation"],
        )


def mlp_apply(net: Mlp, inputs, tape: Tape | None = None) -> tuple[Var, Tape]:
    """Forward pass that records onto ``tape`` (a fresh one if omitted)."""
    tape = tape if tape is not None else Tape()
    return net.trace(tape, inputs), tape


def backward(tape: Tape, output: Var, output_adjoint=None) -> ad.Gradients:
    return tape.backward(output, output_adjoint)
