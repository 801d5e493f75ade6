"""Small grayscale patch sets cut from the images bundled with scikit-image.

Training and test patches come from disjoint source images so the test
set measures generalization across content.
"""

from __future__ import annotations

import numpy as np
from skimage import data
from skimage.color import rgb2gray

TRAIN_SOURCES = ("camera", "astronaut", "coffee", "chelsea", "rocket")
TEST_SOURCES = ("coins", "clock", "immunohistochemistry")


def _gray(name: str) -> np.ndarray:
    img = getattr(data, name)()
    if img.ndim == 3:
        img = rgb2gray(img[..., :3])
    else:
        img = img / 255.0
    return np.asarray(img, dtype=np.float64)


def random_patches(sources, count: int, size: int, seed: int,
                   min_std: float = 0.05, max_tries: int = 10000) -> list:
    """``count`` patches of ``size``x``size`` as (1, size, size) arrays.

    Patches cycle through ``sources``; crops whose standard deviation is
    below ``min_std`` (flat sky, background) are redrawn.
    """
    if count < 0 or size < 1:
        raise ValueError("count must be >= 0 and size >= 1")
    rng = np.random.default_rng(seed)
    images = [_gray(name) for name in sources]
    out = []
    tries = 0
    while len(out) < count:
        img = images[len(out) % len(images)]
        h, w = img.shape
        if h < size or w < size:
            raise ValueError(f"patch size {size} exceeds source image {img.shape}")
        i = int(rng.integers(0, h - size + 1))
        j = int(rng.integers(0, w - size + 1))
        patch = img[i:i + size, j:j + size]
        tries += 1
        if patch.std() < min_std and tries < max_tries:
            continue
        out.append(patch[None].copy())
    return out


def desk_split(n_train: int = 20, n_test: int = 5, size: int = 48, seed: int = 0):
    """(train_truths, test_truths) drawn from disjoint source images."""
    train = random_patches(TRAIN_SOURCES, n_train, size, seed)
    test = random_patches(TEST_SOURCES, n_test, size, seed + 1)
    return train, test
