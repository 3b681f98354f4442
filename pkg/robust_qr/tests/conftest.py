import numpy as np
import pytest

from robust_qr.core.data import Dataset, write_csv
from robust_qr.core.net import linear_architecture


def make_line(n=64, seed=0, noise=0.1, outliers=()):
    """y = 2x + 1 + noise on x in [0, 1]; rows listed in `outliers` get +10 and inlier=False."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    y = 2.0 * x + 1.0 + noise * rng.standard_normal(n)
    mask = np.ones(n, dtype=bool)
    for row in outliers:
        y[row] += 10.0
        mask[row] = False
    return Dataset(features=x, responses=y, inlier_mask=mask, name="line")


@pytest.fixture
def line_data():
    return make_line()


@pytest.fixture
def contaminated_line():
    return make_line(n=50, seed=3, outliers=(17,))


@pytest.fixture
def linear_specs():
    return linear_architecture(1)


@pytest.fixture
def line_csv(tmp_path):
    path = tmp_path / "line.csv"
    write_csv(make_line(n=80, seed=5, outliers=(3, 41)), path)
    return path
