"""Image I/O, synthetic degradation, quality metrics and noise estimation.

Images are float64 arrays of shape (channels, height, width) with nominal
range [0, 1]; 2-D arrays are accepted wherever an image is expected and are
treated as single-channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .linops import CirculantOperator, ShapeError, kernel_from_spec

SSIM_WINDOW = 11
SSIM_STD = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
MAD_CONSTANT = 0.6745
DEFAULT_BORDER = 6


class ImageFormatError(ValueError):
    pass


def as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ShapeError(f"expected (C, H, W) with C in {{1, 3}}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    return x


def crop_border(x, border: int):
    if border <= 0:
        return x
    if 2 * border >= min(x.shape[-2:]):
        raise ShapeError(f"border {border} too wide for image {x.shape}")
    return x[..., border:-border, border:-border]


# ---------------------------------------------------------------------------
# degradation

@dataclass
class DegradationConfig:
    """Blur kernel source, noise level (scalar or ``(lo, hi)``) and seed.

    ``kernel`` is a spec string (``gaussian:1.6``, ``uniform:7``, a kernel
    file path) or an explicit 2-D array.
    """
    kernel: str | np.ndarray = "gaussian:1.6"
    sigma: float | tuple = 0.008
    seed: int = 0
    normalize_kernel: bool = True

    def __post_init__(self):
        if isinstance(self.sigma, (list, tuple)):
            lo, hi = (float(v) for v in self.sigma)
            if lo < 0 or lo > hi:
                raise ValueError("sigma range must satisfy 0 <= lo <= hi")
            self.sigma = (lo, hi)
        elif float(self.sigma) < 0:
            raise ValueError("sigma must be non-negative")

    def kernel_array(self) -> np.ndarray:
        if isinstance(self.kernel, str):
            return kernel_from_spec(self.kernel, normalize=self.normalize_kernel)
        return np.asarray(self.kernel, dtype=np.float64)

    def operator(self, shape) -> CirculantOperator:
        return CirculantOperator(self.kernel_array(), shape)


def image_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream per (seed, image index)."""
    return np.random.default_rng([int(seed), int(index)])


def degrade(truth, cfg: DegradationConfig, index: int = 0, op=None):
    """Blur with the configured kernel and add white Gaussian noise.

    The result is not clipped. Returns ``(observation, sigma_used)``.
    """
    truth = as_image(truth)
    op = op or cfg.operator(truth.shape[-2:])
    rng = image_rng(cfg.seed, index)
    if isinstance(cfg.sigma, tuple):
        sigma = float(rng.uniform(*cfg.sigma))
    else:
        sigma = float(cfg.sigma)
    y = op.apply(truth)
    if sigma > 0:
        y = y + sigma * rng.standard_normal(truth.shape)
    return y, sigma


# ---------------------------------------------------------------------------
# noise estimation

def estimate_noise_std(y) -> float:
    """Median absolute deviation of first-level Haar diagonal coefficients.

    Computed per channel (odd trailing row/column dropped), then combined by
    the median across channels.
    """
    y = as_image(y)
    h, w = y.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError("noise estimation needs at least a 2x2 image")
    y = y[:, : h - h % 2, : w - w % 2]
    hh = 0.5 * (y[:, 0::2, 0::2] - y[:, 0::2, 1::2]
                - y[:, 1::2, 0::2] + y[:, 1::2, 1::2])
    per_channel = np.median(np.abs(hh).reshape(y.shape[0], -1), axis=1)
    return float(np.median(per_channel) / MAD_CONSTANT)


# ---------------------------------------------------------------------------
# SSIM

def _gauss_window():
    r = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-0.5 * (r / SSIM_STD) ** 2)
    return g / g.sum()


_WIN = _gauss_window()


def _filter_valid(a):
    a = sliding_window_view(a, SSIM_WINDOW, axis=-2) @ _WIN
    return sliding_window_view(a, SSIM_WINDOW, axis=-1) @ _WIN


def _filter_valid_adjoint(m):
    pad = SSIM_WINDOW - 1
    m = np.pad(m, [(0, 0)] * (m.ndim - 2) + [(pad, pad), (pad, pad)])
    # window is symmetric, so the adjoint is the same filter on the padded map
    return _filter_valid(m)


def _ssim_terms(x, y):
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(
            f"images must be at least {SSIM_WINDOW} pixels on each side "
            f"after border removal, got {x.shape[-2:]}")
    mx, my = _filter_valid(x), _filter_valid(y)
    vx = _filter_valid(x * x) - mx * mx
    vy = _filter_valid(y * y) - my * my
    cxy = _filter_valid(x * y) - mx * my
    a1 = 2.0 * mx * my + SSIM_C1
    a2 = 2.0 * cxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = vx + vy + SSIM_C2
    smap = a1 * a2 / (b1 * b2)
    return smap, (mx, my, a1, a2, b1, b2)


def _pair(x, truth, border):
    x, truth = as_image(x), as_image(truth)
    if x.shape != truth.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {truth.shape}")
    return crop_border(x, border), crop_border(truth, border)


def ssim(x, truth, border: int = 0) -> float:
    """Mean windowed SSIM over pixels and channels (dynamic range 1).

    11x11 Gaussian window (std 1.5), valid positions only, with the usual
    constants c1 = 0.01^2, c2 = 0.03^2 and c3 = c2 / 2.
    """
    xc, tc = _pair(x, truth, border)
    smap, _ = _ssim_terms(xc, tc)
    return float(smap.mean())


def ssim_and_grad(x, truth, border: int = 0):
    """SSIM value and its gradient with respect to ``x``."""
    x_full = as_image(x)
    xc, tc = _pair(x, truth, border)
    smap, (mx, my, a1, a2, b1, b2) = _ssim_terms(xc, tc)
    n = smap.size
    denom = b1 * b2
    d_mx = 2.0 * my * a2 / denom - smap * 2.0 * mx / b1
    d_vx = -smap / b2
    d_cxy = 2.0 * a1 / denom
    # chain through vx = E[x^2] - mx^2 and cxy = E[xy] - mx my
    g1 = _filter_valid_adjoint((d_mx - 2.0 * mx * d_vx - my * d_cxy) / n)
    g2 = _filter_valid_adjoint(d_vx / n)
    g3 = _filter_valid_adjoint(d_cxy / n)
    grad_c = g1 + 2.0 * xc * g2 + tc * g3
    grad = np.zeros_like(x_full)
    if border > 0:
        grad[..., border:-border, border:-border] = grad_c
    else:
        grad[...] = grad_c
    return float(smap.mean()), grad


def ssim_grad(x, truth, border: int = 0) -> np.ndarray:
    return ssim_and_grad(x, truth, border)[1]


def psnr(x, truth, border: int = 0) -> float:
    """10 log10(1 / MSE); ``inf`` when the images are identical."""
    xc, tc = _pair(x, truth, border)
    mse = float(np.mean((xc - tc) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# PNG I/O

def load_png(path) -> np.ndarray:
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from None
    if img.mode in ("I;16", "I;16B", "I;16L", "I", "F") or img.mode.startswith("I;"):
        raise ImageFormatError(f"{path}: unsupported bit depth (mode {img.mode})")
    if img.mode == "P":
        img = img.convert("RGBA" if "transparency" in img.info else "RGB")
    if img.mode == "LA":
        img = img.convert("L")
    if img.mode == "RGBA":
        img = img.convert("RGB")
    if img.mode == "1":
        img = img.convert("L")
    if img.mode not in ("L", "RGB"):
        raise ImageFormatError(f"{path}: unsupported image mode {img.mode}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return np.transpose(arr, (2, 0, 1)).copy()


def to_uint8(x) -> np.ndarray:
    x = as_image(x)
    q = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return q[0] if q.shape[0] == 1 else np.transpose(q, (1, 2, 0))


def save_png(path, x) -> None:
    """Clamp to [0, 1], round half up to 8 bits and write atomically."""
    path = Path(path)
    q = to_uint8(x)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(q).save(tmp, format="PNG")
    tmp.replace(path)
