import csv
from pathlib import Path

import numpy as np
import pytest

from speechxfer.core import Epoch, LabeledDataset

DATA = Path(__file__).parent / "data"
COLUMNS = ("cv", "transfer_full", "transfer_few")


def load_table(name):
    """Per-subject columns and the printed AVG./STD. footer of a results table."""
    lines = [l for l in (DATA / name).read_text().splitlines() if not l.startswith("#")]
    rows = list(csv.DictReader(lines))
    body = [r for r in rows if r["run"].startswith("subject")]
    footer = {r["run"]: r for r in rows if not r["run"].startswith("subject")}
    columns = {c: [float(r[c]) for r in body] for c in COLUMNS}
    printed = {c: (float(footer["AVG."][c]), float(footer["STD."][c])) for c in COLUMNS}
    return columns, printed


@pytest.fixture(scope="session")
def table1():
    return load_table("table1.csv")


@pytest.fixture(scope="session")
def table2():
    return load_table("table2.csv")


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((4, 3, 16)).astype(np.float32).astype(np.float64)
    return LabeledDataset(data, [0, 1, 0, 1], 250.0, ("yes", "no"), "spoken")


def random_spd(rng, c, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((c, c)))
    vals = np.exp(rng.uniform(0, np.log(cond), c))
    return (q * vals) @ q.T
