"""Shared generators for the test-suite."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from radiosynth.grid import GridGeometry, ImageGrid
from radiosynth.masks import BinaryMask


def random_case(rng: np.random.Generator, max_size: int = 16):
    """Random image and a random mask holding at least one horizontal pair."""
    h, w = rng.integers(3, max_size + 1, size=2)
    g = GridGeometry(int(w), int(h))
    image = rng.uniform(0, 255, size=(h, w)).round(rng.integers(0, 3))
    while True:
        field = ndimage.uniform_filter(rng.normal(size=(h, w)), 3)
        bits = field > rng.uniform(-0.3, 0.3)
        if (bits[:, 1:] & bits[:, :-1]).any():
            break
    return ImageGrid(g, image), BinaryMask(g, bits)
