"""CSV + JSON sidecar serialization for encoded datasets."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .schema import AttributePartition, ColumnEncoding, TabularDataset, decode_blocks


def encoded_column_names(encodings) -> list[str]:
    names = []
    for enc in encodings:
        if enc.kind == "categorical":
            names.extend(f"{enc.name}={c}" for c in enc.categories)
        else:
            names.append(enc.name)
    return names


def save_dataset(ds: TabularDataset, directory, name: str = "data", extra: dict | None = None) -> list[Path]:
    """Write ``<name>.csv`` (encoded rows) and ``<name>.json`` (encodings, partition).

    ``extra`` maps additional column names to per-record values, appended after y.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p = ds.partition
    frame = pd.DataFrame(
        np.hstack([ds.a[:, None], ds.xd, ds.xr, ds.y[:, None]]),
        columns=[p.sensitive, *encoded_column_names(ds.encodings), p.outcome],
    )
    for col, values in (extra or {}).items():
        frame[col] = np.asarray(values)
    csv_path = directory / f"{name}.csv"
    json_path = directory / f"{name}.json"
    frame.to_csv(csv_path, index=False, lineterminator="\n")
    sidecar = {
        "partition": p.to_dict(),
        "encodings": [e.to_dict() for e in ds.encodings],
        "conditioners": list(ds.conditioners),
        "n_records": len(ds),
        "extra_columns": list((extra or {}).keys()),
    }
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return [csv_path, json_path]


def load_dataset(directory, name: str = "data") -> TabularDataset:
    directory = Path(directory)
    csv_path, json_path = directory / f"{name}.csv", directory / f"{name}.json"
    for path in (csv_path, json_path):
        if not path.is_file():
            raise FileNotFoundError(f"missing dataset file: {path}")
    sidecar = json.loads(json_path.read_text())
    partition = AttributePartition.from_dict(sidecar["partition"])
    encodings = [ColumnEncoding.from_dict(e) for e in sidecar["encodings"]]
    frame = pd.read_csv(csv_path)
    n_d = sum(e.width for e in encodings[: len(partition.descendants)])
    cols = encoded_column_names(encodings)
    if list(frame.columns[1:1 + len(cols)]) != cols:
        raise ValueError(f"{csv_path}: header does not match the sidecar encodings")
    x = frame[cols].to_numpy(dtype=float)
    a = frame[partition.sensitive].to_numpy(dtype=float)
    y = frame[partition.outcome].to_numpy(dtype=float)
    raw = decode_blocks(encodings, partition, a, x[:, :n_d], x[:, n_d:], y)
    return TabularDataset.build(raw, partition, encodings, sidecar.get("conditioners", ()), fit=False)
