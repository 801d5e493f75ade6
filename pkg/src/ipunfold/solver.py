"""Forward-backward proximal interior point solver and the VAR baseline.

The solver iterates

    x_{k+1} = prox_{gamma mu_k B}(x_k - gamma grad h(x_k, y, lambda))

with the logarithmic box barrier ``B`` and a geometric barrier schedule
``mu_k = mu0 * mu_decay**k``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier_prox import Box, prox_box
from .imaging import ssim
from .objective import DeblurProblem, full_grad, objective_value

log = logging.getLogger(__name__)


class SolverDivergenceError(RuntimeError):
    """Raised when an iterate or its objective stops being finite."""

    def __init__(self, iteration: int, what: str = "iterate"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class GridSearchError(RuntimeError):
    """Raised when every grid point of a lambda search failed."""


@dataclass
class IpmSchedule:
    """Step size and barrier schedule.

    ``gamma0=None`` picks ``0.9 / L`` where ``L`` bounds the curvature of
    the smooth objective (fidelity plus lambda times the regularizer).
    """
    gamma0: float | None = None
    mu0: float = 1e-2
    mu_decay: float = 0.98
    iterations: int = 300
    x0_margin: float = 0.01

    def __post_init__(self):
        if self.gamma0 is not None and not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")
        if not 0 < self.mu_decay < 1:
            raise ValueError("mu_decay must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0 < self.x0_margin < 0.5:
            raise ValueError("x0_margin must lie in (0, 1/2)")

    def mu(self, k: int) -> float:
        return self.mu0 * self.mu_decay ** k

    def step_size(self, p: DeblurProblem, lam: float) -> float:
        if self.gamma0 is not None:
            return float(self.gamma0)
        lip = p.H.norm_squared() + lam * p.reg_lipschitz()
        return 0.9 / lip


@dataclass
class SolveResult:
    image: np.ndarray
    trace: list = field(default_factory=list)  # (iteration, objective, min_margin)
    gamma: float = 0.0


def initial_point(y, box: Box, margin: float) -> np.ndarray:
    """Clamp ``y`` into the box shrunk by ``margin * (x_max - x_min)``."""
    m = margin * (box.x_max - box.x_min)
    return np.clip(np.asarray(y, dtype=np.float64), box.x_min + m, box.x_max - m)


def box_barrier_value(x, box: Box) -> float:
    x = np.asarray(x)
    return float(-np.sum(np.log(x - box.x_min)) - np.sum(np.log(box.x_max - x)))


def min_margin(x, box: Box) -> float:
    return float(box.margins(x).min())


def run_fb_ipm(p: DeblurProblem, lam: float, sched: IpmSchedule,
               x0=None, mu_fixed: float | None = None) -> SolveResult:
    """Run the proximal interior point iteration.

    Parameters
    ----------
    p : DeblurProblem
    lam : float
        Regularization weight (0 allowed: pure constrained least squares).
    sched : IpmSchedule
    x0 : array, optional
        Strictly feasible starting point; by default ``y`` clamped inside.
    mu_fixed : float, optional
        Hold the barrier parameter constant instead of decaying it.

    Returns
    -------
    SolveResult
        Final iterate and a trace with one row per iterate, starting at
        ``x0`` (iteration 0).
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    gamma = sched.step_size(p, lam)
    if x0 is None:
        x = initial_point(p.y, p.box, sched.x0_margin)
    else:
        x = p._check(x0).copy()
        if min_margin(x, p.box) <= 0:
            raise ValueError("x0 must be strictly inside the box")
    trace = [(0, objective_value(p, x, lam), min_margin(x, p.box))]
    for k in range(sched.iterations):
        mu = mu_fixed if mu_fixed is not None else sched.mu(k)
        u = x - gamma * full_grad(p, x, lam)
        if not np.all(np.isfinite(u)):
            raise SolverDivergenceError(k + 1)
        x = prox_box(u, p.box, mu, gamma, want_derivs=False).value
        value = objective_value(p, x, lam)
        if not np.isfinite(value):
            raise SolverDivergenceError(k + 1, "objective")
        trace.append((k + 1, value, min_margin(x, p.box)))
    return SolveResult(image=x, trace=trace, gamma=gamma)


def write_trace_csv(path, trace) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "min_margin"])
        for it, obj, margin in trace:
            w.writerow([it, repr(float(obj)), repr(float(margin))])
    tmp.replace(path)


def _grid_point(args):
    p, truth, lam, sched, border = args
    try:
        res = run_fb_ipm(p, lam, sched)
    except (SolverDivergenceError, ArithmeticError, ValueError) as exc:
        return lam, None, None, str(exc)
    return lam, res.image, ssim(res.image, truth, border), None


@dataclass
class GridSearchResult:
    best_lambda: float
    best_image: np.ndarray
    best_ssim: float
    scores: list  # (lambda, ssim or None)


def var_grid_search(p: DeblurProblem, truth, lambda_grid, sched: IpmSchedule,
                    workers: int = 1, border: int = 0) -> GridSearchResult:
    """Pick the lambda whose reconstruction has the highest SSIM to ``truth``.

    SSIM ignores a frame of ``border`` pixels. Failed grid points are
    logged and skipped; ties go to the smaller lambda.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    truth = p._check(truth)
    jobs = [(p, truth, lam, sched, border) for lam in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_grid_point, jobs))
    else:
        results = [_grid_point(j) for j in jobs]
    best = None
    scores = []
    for lam, image, score, err in results:
        if err is not None:
            log.warning("lambda=%g failed: %s", lam, err)
            scores.append((lam, None))
            continue
        scores.append((lam, score))
        if (best is None or score > best[2]
                or (score == best[2] and lam < best[0])):
            best = (lam, image, score)
    if best is None:
        raise GridSearchError("every lambda in the grid failed")
    return GridSearchResult(best[0], best[1], best[2], scores)
