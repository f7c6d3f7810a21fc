"""UCI Adult ingestion.

The file is the plain comma-separated release (``adult.data`` / ``adult.test``):
15 fields per line, optional spaces after commas, ``?`` for missing values.
``adult.test`` starts with a ``|1x3 Cross validator`` banner and suffixes the
income label with a period; both quirks are handled.
"""

from __future__ import annotations

import csv
from pathlib import Path

import pandas as pd

from .schema import AttributePartition, ColumnEncoding, TabularDataset

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)

VOCAB = {
    "workclass": ("Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
                  "State-gov", "Without-pay", "Never-worked"),
    "education": ("Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm",
                  "Assoc-voc", "9th", "7th-8th", "12th", "Masters", "1st-4th", "10th",
                  "Doctorate", "5th-6th", "Preschool"),
    "marital-status": ("Married-civ-spouse", "Divorced", "Never-married", "Separated",
                       "Widowed", "Married-spouse-absent", "Married-AF-spouse"),
    "occupation": ("Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
                   "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
                   "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
                   "Armed-Forces"),
    "relationship": ("Wife", "Own-child", "Husband", "Not-in-family", "Other-relative",
                     "Unmarried"),
    "race": ("White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"),
    "sex": ("Female", "Male"),
    "native-country": (
        "United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany",
        "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece", "South", "China", "Cuba",
        "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica", "Vietnam", "Mexico",
        "Portugal", "Ireland", "France", "Dominican-Republic", "Laos", "Ecuador", "Taiwan",
        "Haiti", "Columbia", "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand",
        "Yugoslavia", "El-Salvador", "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands"),
    "income": ("<=50K", ">50K"),
}

CONTINUOUS = ("age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week")

# value mapped to 1; everything else in the vocabulary maps to 0
BINARIZE = {
    "sex": "Male",
    "income": ">50K",
    "race": "White",
    "native-country": "United-States",
}

ADULT_PARTITION = AttributePartition(
    sensitive="sex",
    outcome="income",
    descendants=("workclass", "education-num", "marital-status", "occupation",
                 "relationship", "hours-per-week"),
    remainder=("race", "age", "native-country"),
)

ADULT_CONDITIONERS = ("race", "native-country")


def encoding_for(column: str) -> ColumnEncoding:
    if column in CONTINUOUS:
        return ColumnEncoding(column, "continuous")
    if column in BINARIZE:
        return ColumnEncoding(column, "binary")
    if column in VOCAB:
        return ColumnEncoding(column, "categorical", VOCAB[column])
    raise ValueError(f"no Adult encoding known for column {column!r}")


def read_adult_frame(path, partition: AttributePartition = ADULT_PARTITION) -> pd.DataFrame:
    """Parse an Adult file into raw values for the partition's columns.

    Rows with ``?`` in any used column are dropped. Binarized columns come
    back as 0/1 ints, continuous ones as floats.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Adult file not found: {path}")
    used = list(partition.columns)
    for col in used:
        if col not in ADULT_COLUMNS:
            raise ValueError(f"partition column {col!r} is not an Adult column")
    pos = {c: ADULT_COLUMNS.index(c) for c in used}
    rows: dict[str, list] = {c: [] for c in used}
    with path.open(newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh, skipinitialspace=True), start=1):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if fields[0].startswith("|"):
                continue
            if len(fields) != len(ADULT_COLUMNS):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(ADULT_COLUMNS)} fields, got {len(fields)}"
                )
            fields = [f.strip() for f in fields]
            if any(fields[pos[c]] == "?" for c in used):
                continue
            for col in used:
                rows[col].append(_parse(col, fields[pos[col]], path, lineno))
    frame = pd.DataFrame(rows)
    if frame.empty:
        raise ValueError(f"{path}: no usable records")
    return frame


def _parse(col: str, text: str, path, lineno: int):
    if col in CONTINUOUS:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: column {col}: not a number: {text!r}") from None
    if col == "income":
        text = text.rstrip(".")
    vocab = VOCAB[col]
    if text not in vocab:
        raise ValueError(f"{path}:{lineno}: column {col}: unknown category {text!r}")
    if col in BINARIZE:
        return int(text == BINARIZE[col])
    return text


def ingest_adult(path, partition: AttributePartition = ADULT_PARTITION) -> TabularDataset:
    frame = read_adult_frame(path, partition)
    conditioners = tuple(c for c in ADULT_CONDITIONERS if c in partition.features)
    if len(conditioners) != 2:
        conditioners = ()
    return TabularDataset.build(
        frame, partition, [encoding_for(c) for c in partition.features], conditioners
    )


def adult_train_test(train_path, test_path,
                     partition: AttributePartition = ADULT_PARTITION):
    """The standard train/test files, with encodings fit on the training file."""
    train = ingest_adult(train_path, partition)
    test = TabularDataset.build(
        read_adult_frame(test_path, partition), partition, train.encodings,
        train.conditioners, fit=False,
    )
    return train, test
