import numpy as np
import pytest
import torch

from palearn.core import Dataset

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[7:9])):
            terminalreporter.write_line(line)


def separable_pair(n_per_class=60, size=8, seed=0):
    """Two classes: bright left half versus bright right half, plus noise."""
    rng = np.random.default_rng(seed)
    base = np.zeros((2, size, size))
    base[0, :, : size // 2] = 1.0
    base[1, :, size // 2:] = 1.0
    labels = np.repeat([0, 1], n_per_class)
    images = 0.2 + 0.6 * base[labels] + 0.15 * rng.standard_normal((len(labels), size, size))
    return Dataset(np.clip(images, 0, 1)[..., None], labels, 2)


def edge_bars(n=80, size=8, seed=0):
    """Images with one bright bar along the top edge, random thickness and noise.

    Rotating by 90*i counter-clockwise moves the bar to the top, left, bottom
    or right edge, so a band-mean statistic recovers i exactly.
    """
    rng = np.random.default_rng(seed)
    images = 0.1 + 0.1 * rng.random((n, size, size))
    for k in range(n):
        thick = rng.integers(1, 3)
        images[k, :thick, :] += rng.uniform(0.5, 0.8)
    labels = rng.integers(0, 2, n)
    return Dataset(np.clip(images, 0, 1)[..., None], labels, 2)


def bar_side(img):
    """Oracle for edge_bars: index of the brightest edge band in (top, left, bottom, right)."""
    img = img[..., 0]
    return int(np.argmax([img[0].mean(), img[:, 0].mean(), img[-1].mean(), img[:, -1].mean()]))


@pytest.fixture
def pair_data():
    return separable_pair()


@pytest.fixture
def bar_data():
    return edge_bars()
