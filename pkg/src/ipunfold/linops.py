"""Periodic (circulant) linear operators on images.

Images are arrays whose two trailing axes are (height, width); any leading
axes (channels, batch) are carried along and processed independently.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Raised when an image does not match an operator's spatial shape."""


class CirculantOperator:
    """Periodic convolution by a centered kernel with odd side lengths.

    Parameters
    ----------
    kernel : array_like
        2-D real kernel. Its center element multiplies the pixel itself.
    shape : tuple of int
        Spatial shape (height, width) of the images the operator acts on.
    """

    def __init__(self, kernel, shape):
        kernel = np.array(kernel, dtype=np.float64)
        if kernel.ndim == 1:
            kernel = kernel[None, :]
        if kernel.ndim != 2:
            raise ValueError("kernel must be 2-D")
        if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise ValueError(
                f"kernel side lengths must be odd, got {kernel.shape}")
        shape = tuple(int(s) for s in shape)
        if len(shape) != 2 or min(shape) < 1:
            raise ValueError(f"invalid image shape {shape}")
        kernel.setflags(write=False)
        self.kernel = kernel
        self.shape = shape
        self._spectrum = None

    @property
    def spectrum(self) -> np.ndarray:
        """DFT eigenvalues: fft2 of the zero-padded kernel rolled to (0, 0)."""
        if self._spectrum is None:
            kh, kw = self.kernel.shape
            rows = (np.arange(kh) - kh // 2) % self.shape[0]
            cols = (np.arange(kw) - kw // 2) % self.shape[1]
            padded = np.zeros(self.shape)
            # kernels wider than the image wrap around (periodization)
            np.add.at(padded, (rows[:, None], cols[None, :]), self.kernel)
            spec = np.fft.fft2(padded)
            spec.setflags(write=False)
            self._spectrum = spec
        return self._spectrum

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2:] != self.shape:
            raise ShapeError(
                f"image spatial shape {x.shape[-2:]} does not match "
                f"operator shape {self.shape}")
        return x

    def apply(self, x) -> np.ndarray:
        x = self._check(x)
        return np.real(np.fft.ifft2(np.fft.fft2(x) * self.spectrum))

    def apply_adjoint(self, x) -> np.ndarray:
        x = self._check(x)
        return np.real(np.fft.ifft2(np.fft.fft2(x) * np.conj(self.spectrum)))

    def apply_normal(self, x) -> np.ndarray:
        """A^T A x in a single pair of transforms."""
        x = self._check(x)
        return np.real(np.fft.ifft2(np.fft.fft2(x) * self.eigenvalues_normal()))

    def eigenvalues_normal(self) -> np.ndarray:
        """Eigenvalues of A^T A per DFT frequency (non-negative)."""
        spec = self.spectrum
        return spec.real ** 2 + spec.imag ** 2

    def norm_squared(self) -> float:
        """Squared spectral norm ||A||^2."""
        return float(self.eigenvalues_normal().max())

    def __call__(self, x):
        return self.apply(x)

    def __repr__(self):
        return (f"CirculantOperator(kernel_shape={self.kernel.shape}, "
                f"shape={self.shape})")


def apply(op: CirculantOperator, x) -> np.ndarray:
    return op.apply(x)


def apply_adjoint(op: CirculantOperator, x) -> np.ndarray:
    return op.apply_adjoint(x)


def eigenvalues_normal(op: CirculantOperator) -> np.ndarray:
    return op.eigenvalues_normal()


def identity(shape) -> CirculantOperator:
    return CirculantOperator(np.ones((1, 1)), shape)


def gradient_operator(shape, direction: str) -> CirculantOperator:
    """Forward circular first difference along one axis.

    ``vertical`` gives ``x[i+1, j] - x[i, j]``, ``horizontal`` gives
    ``x[i, j+1] - x[i, j]`` (indices wrap around).
    """
    # centered 3-tap kernel; index 0 is offset -1, i.e. it picks x[i+1]
    taps = np.array([1.0, -1.0, 0.0])
    if direction == "vertical":
        kernel = taps[:, None]
    elif direction == "horizontal":
        kernel = taps[None, :]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return CirculantOperator(kernel, shape)


class GradientOperators:
    """Pair of circular gradient operators (vertical, horizontal)."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.vertical = gradient_operator(self.shape, "vertical")
        self.horizontal = gradient_operator(self.shape, "horizontal")

    def __iter__(self):
        yield self.vertical
        yield self.horizontal

    def eigenvalues_normal(self) -> np.ndarray:
        """Eigenvalues of Dv^T Dv + Dh^T Dh."""
        return (self.vertical.eigenvalues_normal()
                + self.horizontal.eigenvalues_normal())


def gaussian_kernel(std: float, size: int | None = None) -> np.ndarray:
    """Normalized isotropic Gaussian kernel; default size covers +-4 std."""
    if std <= 0:
        raise ValueError("std must be positive")
    if size is None:
        size = 2 * int(np.ceil(4 * std)) + 1
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / std) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def uniform_kernel(size: int) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError("uniform kernel size must be a positive odd integer")
    return np.full((size, size), 1.0 / size ** 2)


def load_kernel(path, normalize: bool = True) -> np.ndarray:
    """Read a kernel text file: ``rows cols`` then row-major reals."""
    text = Path(path).read_text().split()
    if len(text) < 2:
        raise ValueError(f"{path}: missing 'rows cols' header")
    try:
        rows, cols = int(text[0]), int(text[1])
        values = np.array([float(v) for v in text[2:]])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed kernel file ({exc})") from None
    if values.size != rows * cols:
        raise ValueError(
            f"{path}: expected {rows * cols} values, found {values.size}")
    kernel = values.reshape(rows, cols)
    if normalize:
        total = kernel.sum()
        if total == 0:
            raise ValueError(f"{path}: kernel sums to zero, cannot normalize")
        kernel = kernel / total
    return kernel


def save_kernel(path, kernel) -> None:
    kernel = np.asarray(kernel, dtype=np.float64)
    lines = [f"{kernel.shape[0]} {kernel.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in kernel]
    Path(path).write_text("\n".join(lines) + "\n")


def kernel_from_spec(spec: str, normalize: bool = True) -> np.ndarray:
    """Parse ``gaussian:<std>[:<size>]``, ``uniform:<size>``, ``identity``
    or a path to a kernel file."""
    parts = spec.split(":")
    kind = parts[0].lower()
    if kind == "gaussian":
        if len(parts) not in (2, 3):
            raise ValueError(f"bad kernel spec {spec!r}")
        size = int(parts[2]) if len(parts) == 3 else 25
        return gaussian_kernel(float(parts[1]), size)
    if kind == "uniform":
        if len(parts) != 2:
            raise ValueError(f"bad kernel spec {spec!r}")
        return uniform_kernel(int(parts[1]))
    if kind == "identity":
        return np.ones((1, 1))
    if not Path(spec).exists():
        raise ValueError(f"kernel spec {spec!r} is neither a known kind "
                         "nor an existing file")
    return load_kernel(spec, normalize=normalize)
