import csv
import itertools
from pathlib import Path

import numpy as np
import pytest

from rwpi.core import Dataset

_CRITERIA: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA.append(line)
    print(line)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_regression(rng, n, d, noise=1.0):
    X = rng.standard_normal((n, d))
    beta = rng.standard_normal(d)
    return Dataset(X, X @ beta + noise * rng.standard_normal(n)), beta


def random_binary(rng, n, d):
    X = rng.standard_normal((n, d))
    score = X @ rng.standard_normal(d) + rng.standard_normal(n)
    return Dataset(X, np.where(score > 0, 1.0, -1.0), "binary")


DIABETES_NAMES = ["age", "sex", "bmi", "map", "tc", "ldl", "hdl", "tch", "ltg", "glu"]


def write_diabetes_csv(path: Path) -> Path:
    """64-column diabetes design: 10 main effects, 9 squares (not sex), 45 interactions."""
    from sklearn.datasets import load_diabetes

    X, y = load_diabetes(return_X_y=True, scaled=False)
    cols, names = [X[:, j] for j in range(10)], list(DIABETES_NAMES)
    for j, name in enumerate(DIABETES_NAMES):
        if name != "sex":
            cols.append(X[:, j] ** 2)
            names.append(f"{name}^2")
    for i, j in itertools.combinations(range(10), 2):
        cols.append(X[:, i] * X[:, j])
        names.append(f"{DIABETES_NAMES[i]}:{DIABETES_NAMES[j]}")
    A = np.column_stack(cols)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["y"])
        for row, target in zip(A, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    return path


@pytest.fixture(scope="session")
def diabetes_csv(tmp_path_factory):
    pytest.importorskip("sklearn")
    return write_diabetes_csv(tmp_path_factory.mktemp("data") / "diabetes.csv")
