"""Deblurring objective: quadratic data fidelity plus a regularizer.

The regularizer is either the smoothed total variation

    R(x) = sum_i sqrt(((Dv x)_i^2 + (Dh x)_i^2) / delta^2 + 1)

applied channel by channel, or the quadratic ``0.5 * sum_j ||D_j x||^2``
used by the stability analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .barrier_prox import Box
from .linops import CirculantOperator, GradientOperators, ShapeError

DEFAULT_DELTA = 0.01


@dataclass(frozen=True)
class SmoothedTV:
    pass


@dataclass(frozen=True)
class Quadratic:
    """``0.5 * sum_j ||D_j x||^2``; ``D`` may be one operator or several."""
    D: CirculantOperator | Sequence[CirculantOperator]

    @property
    def operators(self) -> tuple:
        if isinstance(self.D, CirculantOperator):
            return (self.D,)
        return tuple(self.D)

    def eigenvalues_normal(self) -> np.ndarray:
        return sum(op.eigenvalues_normal() for op in self.operators)


@dataclass
class DeblurProblem:
    H: CirculantOperator
    y: np.ndarray
    delta: float = DEFAULT_DELTA
    box: Box = field(default_factory=Box)
    reg_kind: SmoothedTV | Quadratic = field(default_factory=SmoothedTV)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 2:
            self.y = self.y[None]
        if self.y.shape[-2:] != self.H.shape:
            raise ShapeError(f"observation shape {self.y.shape} does not match "
                             f"operator shape {self.H.shape}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if isinstance(self.reg_kind, Quadratic):
            for op in self.reg_kind.operators:
                if op.shape != self.H.shape:
                    raise ShapeError("regularization operator shape mismatch")
        self.grads = GradientOperators(self.H.shape)

    @property
    def shape(self):
        return self.y.shape

    def with_observation(self, y) -> "DeblurProblem":
        return DeblurProblem(self.H, y, self.delta, self.box, self.reg_kind)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.y.shape:
            raise ShapeError(f"image shape {x.shape} != {self.y.shape}")
        return x

    def reg_lipschitz(self) -> float:
        """Upper bound on the curvature of the regularizer."""
        if isinstance(self.reg_kind, Quadratic):
            return float(self.reg_kind.eigenvalues_normal().max())
        return float(self.grads.eigenvalues_normal().max()) / self.delta ** 2


def fidelity_value_grad(p: DeblurProblem, x):
    """``0.5 ||Hx - y||^2`` and its gradient ``H^T (Hx - y)``."""
    x = p._check(x)
    r = p.H.apply(x) - p.y
    return 0.5 * float(np.sum(r * r)), p.H.apply_adjoint(r)


def _tv_parts(p, x):
    g = p.grads.vertical.apply(x)
    h = p.grads.horizontal.apply(x)
    r = np.sqrt((g * g + h * h) / p.delta ** 2 + 1.0)
    return g, h, r


def tv_value_grad(p: DeblurProblem, x):
    x = p._check(x)
    g, h, r = _tv_parts(p, x)
    grad = (p.grads.vertical.apply_adjoint(g / r)
            + p.grads.horizontal.apply_adjoint(h / r)) / p.delta ** 2
    return float(np.sum(r)), grad


def tv_hessian_vec(p: DeblurProblem, x, v):
    """Hessian of the smoothed TV at ``x`` applied to ``v``."""
    x = p._check(x)
    v = p._check(v)
    g, h, r = _tv_parts(p, x)
    dv = p.grads.vertical.apply(v)
    dh = p.grads.horizontal.apply(v)
    d2r3 = p.delta ** 2 * r ** 3
    # per-pixel 2x2 block of d(g/r, h/r)/d(g, h)
    bv = (1.0 / r - g * g / d2r3) * dv - (g * h / d2r3) * dh
    bh = (1.0 / r - h * h / d2r3) * dh - (g * h / d2r3) * dv
    return (p.grads.vertical.apply_adjoint(bv)
            + p.grads.horizontal.apply_adjoint(bh)) / p.delta ** 2


def reg_value_grad(p: DeblurProblem, x):
    if isinstance(p.reg_kind, Quadratic):
        x = p._check(x)
        value, grad = 0.0, np.zeros_like(x)
        for op in p.reg_kind.operators:
            dx = op.apply(x)
            value += 0.5 * float(np.sum(dx * dx))
            grad += op.apply_adjoint(dx)
        return value, grad
    return tv_value_grad(p, x)


def reg_hessian_vec(p: DeblurProblem, x, v):
    if isinstance(p.reg_kind, Quadratic):
        v = p._check(v)
        return sum(op.apply_normal(v) for op in p.reg_kind.operators)
    return tv_hessian_vec(p, x, v)


def objective_value(p: DeblurProblem, x, lam) -> float:
    """h(x, y, lambda) = fidelity + lambda * R."""
    f, _ = fidelity_value_grad(p, x)
    if lam == 0:
        return f
    r, _ = reg_value_grad(p, x)
    return f + lam * r


def full_grad(p: DeblurProblem, x, lam):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    _, grad = fidelity_value_grad(p, x)
    if lam == 0:
        return grad
    _, rgrad = reg_value_grad(p, x)
    return grad + lam * rgrad


def full_hessian_vec(p: DeblurProblem, x, v, lam):
    """(H^T H + lambda * Hess R(x)) v."""
    out = p.H.apply_normal(p._check(v))
    if lam != 0:
        out = out + lam * reg_hessian_vec(p, x, v)
    return out
