from pathlib import Path

import numpy as np
import pytest

from lamb import dataset

DATA = Path(__file__).parent / "data"

# Verified facts about the 12-buyer x 14-item toy matrix shipped in
# tests/data: column sums, the equal pair correlations, and the equal
# pair l1 distances (2 cells for both pairs).
TOY_COLUMN_SUMS = (6, 6, 6, 6, 5, 5, 5, 5, 5, 7, 7, 7, 7, 7)
TOY_PAIR_R = 2.0 / 3.0
# n=12 pair evidence cannot clear the BY cutoff at q=0.05 (the smallest
# reachable p-value there is ~1.5e-3 vs. a 1.1e-3 threshold); the toy
# mining checks run at a level inside the band where the output is
# stable ({item01, item02} for any q in [0.10, 0.30]).
TOY_Q = 0.15


@pytest.fixture(scope="session")
def toy_csv_path() -> Path:
    return DATA / "toy.csv"


@pytest.fixture(scope="session")
def toy_txt_path() -> Path:
    return DATA / "toy.txt"


@pytest.fixture(scope="session")
def toy() -> dataset.BinaryDataset:
    return dataset.load_dense_csv(DATA / "toy.csv")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
