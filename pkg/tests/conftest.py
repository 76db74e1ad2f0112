import math

import pytest

from postselect_lab import generate_synthetic


def brute_force_1nn(train_X, train_y, query):
    """Reference nearest neighbour by explicit loop; lowest index wins ties."""
    best, best_d = None, math.inf
    for i, x in enumerate(train_X):
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(x, query)))
        if d < best_d:
            best, best_d = i, d
    return int(train_y[best])


def chance_band(num_labels: int, size: int, n_se: float = 3.0) -> tuple[float, float]:
    p = 1 - 1 / num_labels
    half = n_se * math.sqrt(p * (1 - p) / size)
    return p - half, p + half


@pytest.fixture
def noise300():
    return generate_synthetic("pure-noise-labels", 300, 2, 2, 11)


@pytest.fixture
def clusters60():
    return generate_synthetic("gaussian-clusters", 60, 2, 3, 1)
