"""Testing the Markov assumption in sequential decision data and choosing a lag order."""

from .markov_test import TestConfig, TestResult, run_test
from .trajectory import DataError, Dataset, Trajectory, lag_embed, load_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "TestConfig",
    "TestResult",
    "Trajectory",
    "lag_embed",
    "load_dataset",
    "run_test",
    "write_dataset",
]
