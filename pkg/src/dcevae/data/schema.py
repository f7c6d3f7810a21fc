"""Attribute partition, per-column encodings and the encoded dataset."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

KINDS = ("binary", "categorical", "continuous")


@dataclass(frozen=True)
class AttributePartition:
    """Which column plays the role of a, y, x_d (descendants of a) and x_r (the rest)."""

    sensitive: str
    outcome: str
    descendants: tuple[str, ...]
    remainder: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "descendants", tuple(self.descendants))
        object.__setattr__(self, "remainder", tuple(self.remainder))
        groups = [(self.sensitive,), (self.outcome,), self.descendants, self.remainder]
        seen: set[str] = set()
        for g in groups:
            for name in g:
                if name in seen:
                    raise ValueError(f"column {name!r} assigned to more than one group")
                seen.add(name)
        if not self.descendants or not self.remainder:
            raise ValueError("both x_d and x_r need at least one column")

    @property
    def features(self) -> tuple[str, ...]:
        return self.descendants + self.remainder

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.sensitive,) + self.features + (self.outcome,)

    def to_dict(self) -> dict:
        return {
            "sensitive": self.sensitive,
            "outcome": self.outcome,
            "descendants": list(self.descendants),
            "remainder": list(self.remainder),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributePartition":
        return cls(d["sensitive"], d["outcome"], tuple(d["descendants"]), tuple(d["remainder"]))


@dataclass(frozen=True)
class ColumnEncoding:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown encoding kind {self.kind!r}")
        if self.kind == "categorical" and len(self.categories) < 2:
            raise ValueError(f"{self.name}: one-hot columns need at least 2 categories")
        if self.kind == "continuous" and not self.std > 0:
            raise ValueError(f"{self.name}: std must be positive, got {self.std}")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1

    def fit(self, values: pd.Series) -> "ColumnEncoding":
        """Refit data-dependent statistics (continuous mean/std only)."""
        if self.kind != "continuous":
            return self
        v = values.to_numpy(dtype=float)
        std = float(v.std())
        return replace(self, mean=float(v.mean()), std=std if std > 0 else 1.0)

    def encode(self, values: pd.Series) -> np.ndarray:
        if self.kind == "binary":
            v = values.to_numpy()
            bad = ~np.isin(v, (0, 1))
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise ValueError(f"{self.name}: non-binary value {v[row]!r} at row {row}")
            return v.astype(float)[:, None]
        if self.kind == "continuous":
            return ((values.to_numpy(dtype=float) - self.mean) / self.std)[:, None]
        lookup = {c: i for i, c in enumerate(self.categories)}
        out = np.zeros((len(values), self.width))
        for row, v in enumerate(values.to_numpy()):
            j = lookup.get(v)
            if j is None:
                raise ValueError(f"{self.name}: unknown category {v!r} at row {row}")
            out[row, j] = 1.0
        return out

    def decode(self, block: np.ndarray):
        """Inverse of :meth:`encode`; binary thresholds at 0.5, one-hot takes the argmax."""
        block = np.asarray(block, dtype=float)
        if self.kind == "binary":
            return (block[:, 0] >= 0.5).astype(int)
        if self.kind == "continuous":
            return block[:, 0] * self.std + self.mean
        return np.asarray(self.categories, dtype=object)[np.argmax(block, axis=1)]

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        if self.kind == "continuous":
            d["mean"] = self.mean
            d["std"] = self.std
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnEncoding":
        return cls(
            d["name"],
            d["kind"],
            tuple(d.get("categories", ())),
            float(d.get("mean", 0.0)),
            float(d.get("std", 1.0)),
        )


def _encode_block(frame: pd.DataFrame, encodings: Sequence[ColumnEncoding]) -> np.ndarray:
    if not encodings:
        return np.zeros((len(frame), 0))
    return np.hstack([enc.encode(frame[enc.name]) for enc in encodings])


@dataclass(frozen=True)
class TabularDataset:
    """Raw records plus their encoded x_d / x_r blocks.

    ``raw`` keeps decoded values (binary columns as 0/1 ints, categoricals as
    strings, continuous as floats) for every partition column.
    """

    partition: AttributePartition
    encodings: tuple[ColumnEncoding, ...]
    raw: pd.DataFrame
    xd: np.ndarray = field(repr=False)
    xr: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    conditioners: tuple[str, ...] = ()

    @classmethod
    def build(cls, raw: pd.DataFrame, partition: AttributePartition,
              encodings: Sequence[ColumnEncoding], conditioners=(), fit=True) -> "TabularDataset":
        by_name = {e.name: e for e in encodings}
        missing = [c for c in partition.features if c not in by_name]
        if missing:
            raise ValueError(f"no encoding declared for columns {missing}")
        ordered = [by_name[c] for c in partition.features]
        if fit:
            ordered = [e.fit(raw[e.name]) for e in ordered]
        raw = raw[list(partition.columns)].reset_index(drop=True)
        for col in (partition.sensitive, partition.outcome):
            v = raw[col].to_numpy()
            if not np.isin(v, (0, 1)).all():
                raise ValueError(f"{col} must be coded 0/1")
        if raw.isna().any().any():
            raise ValueError("dataset contains missing values")
        n_d = len(partition.descendants)
        return cls(
            partition=partition,
            encodings=tuple(ordered),
            raw=raw,
            xd=_encode_block(raw, ordered[:n_d]),
            xr=_encode_block(raw, ordered[n_d:]),
            a=raw[partition.sensitive].to_numpy(dtype=float),
            y=raw[partition.outcome].to_numpy(dtype=float),
            conditioners=tuple(conditioners),
        )

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def xd_encodings(self) -> tuple[ColumnEncoding, ...]:
        return self.encodings[: len(self.partition.descendants)]

    @property
    def xr_encodings(self) -> tuple[ColumnEncoding, ...]:
        return self.encodings[len(self.partition.descendants):]

    @property
    def records(self) -> np.ndarray:
        """Encoded rows laid out as [a, x_d, x_r, y]."""
        return np.hstack([self.a[:, None], self.xd, self.xr, self.y[:, None]])

    @property
    def x(self) -> np.ndarray:
        return np.hstack([self.xd, self.xr])

    def subset(self, index) -> "TabularDataset":
        """Rows ``index`` with the encodings left as they are."""
        return TabularDataset.build(
            self.raw.iloc[np.asarray(index)], self.partition, self.encodings,
            self.conditioners, fit=False,
        )

    def reencode(self, encodings: Sequence[ColumnEncoding]) -> "TabularDataset":
        return TabularDataset.build(self.raw, self.partition, encodings, self.conditioners, fit=False)

    def with_features(self, a=None, xd=None, xr=None, y=None) -> "TabularDataset":
        """Dataset whose records are the decoding of the given encoded blocks (e.g. decoder output)."""
        a = self.a if a is None else np.asarray(a, float)
        xd = self.xd if xd is None else np.asarray(xd, float)
        xr = self.xr if xr is None else np.asarray(xr, float)
        y = self.y if y is None else np.asarray(y, float)
        frame = decode_blocks(self.encodings, self.partition, a, xd, xr, y)
        return TabularDataset.build(frame, self.partition, self.encodings, self.conditioners, fit=False)

    def condition_cells(self) -> np.ndarray:
        """Per-record cell index ``2*o1 + o2`` over the two binary conditioners."""
        if len(self.conditioners) != 2:
            raise ValueError("dataset declares no pair of conditioning columns")
        o1, o2 = (self.raw[c].to_numpy(dtype=int) for c in self.conditioners)
        for name, o in zip(self.conditioners, (o1, o2)):
            if not np.isin(o, (0, 1)).all():
                raise ValueError(f"conditioner {name} is not binary")
        return 2 * o1 + o2


def decode_blocks(encodings, partition, a, xd, xr, y) -> pd.DataFrame:
    x = np.hstack([xd, xr])
    cols = {partition.sensitive: (np.asarray(a) >= 0.5).astype(int)}
    start = 0
    for enc in encodings:
        cols[enc.name] = enc.decode(x[:, start:start + enc.width])
        start += enc.width
    cols[partition.outcome] = (np.asarray(y) >= 0.5).astype(int)
    return pd.DataFrame(cols)[list(partition.columns)]


def split_indices(n: int, test_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    order = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"split of {n} records at {test_fraction} leaves an empty side")
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def split(ds: TabularDataset, test_fraction: float, rng) -> tuple[TabularDataset, TabularDataset]:
    """Seeded shuffle split; continuous statistics are refit on the train part only."""
    train_idx, test_idx = split_indices(len(ds), test_fraction, rng)
    train_raw = ds.raw.iloc[train_idx]
    fitted = [e.fit(train_raw[e.name]) for e in ds.encodings]
    train = TabularDataset.build(train_raw, ds.partition, fitted, ds.conditioners, fit=False)
    test = TabularDataset.build(ds.raw.iloc[test_idx], ds.partition, fitted, ds.conditioners, fit=False)
    return train, test
