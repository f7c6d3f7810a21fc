from .adult import ADULT_PARTITION, adult_train_test, ingest_adult, read_adult_frame
from .io import load_dataset, save_dataset
from .schema import AttributePartition, ColumnEncoding, TabularDataset, split, split_indices
from .scm import ScmSample, ScmSpec, generate_scm, split_scm

__all__ = [
    "ADULT_PARTITION",
    "AttributePartition",
    "ColumnEncoding",
    "ScmSample",
    "ScmSpec",
    "TabularDataset",
    "adult_train_test",
    "generate_scm",
    "ingest_adult",
    "load_dataset",
    "read_adult_frame",
    "save_dataset",
    "split",
    "split_indices",
    "split_scm",
]
