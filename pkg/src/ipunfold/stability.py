"""Averagedness certificates for the unfolded network on quadratic problems.

For the problem ``0.5 ||Hx - y||^2 + (lambda / 2) ||Dx||^2`` over a box,
layer ``k`` is ``R_k(W_k x + b_k)`` with ``W_k = I - gamma_k (H^T H +
lambda_k D^T D)`` and ``R_k`` the barrier prox. When ``H`` and ``D`` are
circulant every ``W_k`` is diagonal in the Fourier basis, so operator norms
of products reduce to maxima over per-frequency products.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .barrier_prox import prox_box
from .linops import CirculantOperator
from .objective import DeblurProblem, Quadratic
from .unfolded import infer


class UnsupportedProblemError(ValueError):
    """The problem is not a circulant quadratic one."""


@dataclass
class StabilityCertificate:
    alpha: float | None
    condition: str  # "i", "ii", "iii" or "none"
    beta_minus: float
    beta_plus: float
    theta_last: float
    K: int
    kernel_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json() + "\n")
        tmp.replace(path)


def layer_weight_spectrum(gamma_k, lambda_k, eig_H, eig_D) -> np.ndarray:
    """Per-frequency eigenvalues ``1 - gamma (beta_H + lambda beta_D)``."""
    eig_H = np.asarray(eig_H, dtype=np.float64).ravel()
    eig_D = np.asarray(eig_D, dtype=np.float64).ravel()
    if eig_H.shape != eig_D.shape:
        raise ValueError(f"spectrum length mismatch {eig_H.size} vs {eig_D.size}")
    return 1.0 - gamma_k * (eig_H + lambda_k * eig_D)


def theta_sequence(spectra):
    """Bound sequence ``theta_0..theta_{K-1}`` and the extreme eigenvalues
    ``(beta_minus, beta_plus)`` of the full product.

    ``theta_k = sum_{l<=k} theta_{l-1} max_p |prod_{j=l..k} beta_j^(p)|``
    with ``theta_{-1} = 1``.
    """
    spectra = [np.asarray(s, dtype=np.float64).ravel() for s in spectra]
    if not spectra:
        raise ValueError("need at least one layer spectrum")
    if len({s.size for s in spectra}) != 1:
        raise ValueError("all layer spectra must have the same length")
    K = len(spectra)
    theta = np.empty(K)
    prev = [1.0]  # theta_{l-1} for l = 0..k
    for k in range(K):
        total = 0.0
        prod = np.ones_like(spectra[0])
        # walk l downwards so the product W_k...W_l grows one factor at a time
        for l in range(k, -1, -1):
            prod = prod * spectra[l]
            total += prev[l] * float(np.max(np.abs(prod)))
        theta[k] = total
        prev.append(total)
    full = np.prod(np.vstack(spectra), axis=0)
    return theta, float(full.min()), float(full.max())


def _condition_holds(cond, alpha, s, theta, K):
    p = 2.0 ** K
    if cond == "i":
        return s <= 0 and theta <= 0.5 * p * (2 * alpha - 1)
    if cond == "ii":
        return 0 <= s <= 2 * p * (1 - alpha) and 2 * theta <= s + p * (2 * alpha - 1)
    if cond == "iii":
        return 2 * p * (1 - alpha) <= s and theta <= 0.5 * p
    raise ValueError(cond)


def _alpha_candidate(cond, s, theta, K):
    """Smallest alpha in [1/2, 1] for one condition, or None."""
    p = 2.0 ** K
    if cond == "i":
        if s > 0:
            return None
        alpha = max(0.5, 0.5 + theta / p)
    elif cond == "iii":
        if theta > 0.5 * p:
            return None
        alpha = max(0.5, 1.0 - s / (2 * p))
    else:
        if s < 0:
            return None
        alpha = max(0.5, 0.5 + (2 * theta - s) / (2 * p))
    if alpha > 1:
        return None
    # closed forms can land one ulp short of the inequality
    for _ in range(8):
        if _condition_holds(cond, alpha, s, theta, K):
            return alpha
        alpha = float(np.nextafter(alpha, 2.0))
    return None


def _order(s, theta, K, tightest):
    if tightest:
        return ("i", "ii", "iii")
    # by inequality structure: (i) covers s <= 0, (iii) is available when
    # theta is small enough, (ii) remains for the large-theta case
    if s <= 0:
        return ("i", "ii")
    if theta <= 2.0 ** (K - 1):
        return ("iii", "ii")
    return ("ii",)


def certify(layers, eig_H, eig_D, tightest: bool = False,
            kernel_hash: str = "") -> StabilityCertificate:
    """Certify averagedness of the network with frozen ``(gamma_k, lambda_k)``.

    Parameters
    ----------
    layers : sequence of (gamma_k, mu_k, lambda_k)
        Frozen layer values; ``mu_k`` does not enter the certificate.
    eig_H, eig_D : array
        Eigenvalues of ``H^T H`` and ``D^T D`` in the shared Fourier basis.
    tightest : bool
        By default the applicable conditions are tried in the order
        (i), (iii), (ii) and the first one with an admissible alpha wins.
        With ``tightest=True`` the smallest alpha over all three
        conditions is returned instead.
    """
    layers = list(layers)
    if not layers:
        raise ValueError("need at least one layer")
    spectra = [layer_weight_spectrum(g, lam, eig_H, eig_D)
               for g, _mu, lam in layers]
    theta, b_minus, b_plus = theta_sequence(spectra)
    K = len(layers)
    s = b_minus + b_plus
    best = None
    for cond in _order(s, theta[-1], K, tightest):
        alpha = _alpha_candidate(cond, s, theta[-1], K)
        if alpha is None:
            continue
        if best is None or (tightest and alpha < best[0]):
            best = (alpha, cond)
        if not tightest:
            break
    alpha, cond = best if best is not None else (None, "none")
    return StabilityCertificate(alpha, cond, b_minus, b_plus, float(theta[-1]),
                                K, kernel_hash)


def frozen_layers(net, y) -> list:
    """``(gamma_k, mu_k, lambda_k)`` of a trained network evaluated on
    the observation ``y``; lambda's data dependence is frozen there."""
    return infer(net, y, return_path=True)[1]


def kernel_hash(kernel) -> str:
    k = np.ascontiguousarray(np.asarray(kernel, dtype=np.float64))
    h = hashlib.sha256()
    h.update(repr(k.shape).encode())
    h.update(k.tobytes())
    return h.hexdigest()


def problem_spectra(problem: DeblurProblem):
    """Eigenvalues of ``H^T H`` and ``D^T D`` for a circulant quadratic problem."""
    if not isinstance(problem.reg_kind, Quadratic):
        raise UnsupportedProblemError(
            "certification needs a quadratic regularizer (got smoothed TV)")
    ops = (problem.H,) + problem.reg_kind.operators
    if not all(isinstance(op, CirculantOperator) for op in ops):
        raise UnsupportedProblemError("certification needs circulant operators")
    return (problem.H.eigenvalues_normal().ravel(),
            problem.reg_kind.eigenvalues_normal().ravel())


def certify_problem(layers, problem: DeblurProblem, tightest: bool = False):
    eig_H, eig_D = problem_spectra(problem)
    return certify(layers, eig_H, eig_D, tightest, kernel_hash(problem.H.kernel))


def network_map(layers, problem: DeblurProblem, x0):
    """Apply ``R_{K-1}(W_{K-1} . + b_{K-1}) o ... o R_0(W_0 . + b_0)``.

    ``layers`` holds ``(gamma_k, mu_k, lambda_k)`` triples.
    """
    problem_spectra(problem)  # validates the problem kind
    x = problem._check(x0)
    hty = problem.H.apply_adjoint(problem.y)
    for gamma, mu, lam in layers:
        reg = sum(op.apply_normal(x) for op in problem.reg_kind.operators)
        u = x - gamma * (problem.H.apply_normal(x) - hty + lam * reg)
        x = prox_box(u, problem.box, mu, gamma, want_derivs=False).value
    return x


def empirical_averagedness_check(layers, problem: DeblurProblem, alpha: float,
                                 num_pairs: int = 1000, seed: int = 0,
                                 low: float = -1.0, high: float = 2.0,
                                 slack: float = 1e-10, local_scale: float = 1e-3):
    """Monte-Carlo test of the averagedness inequality

        ||Tx - Tz||^2 <= ||x - z||^2 - (1 - alpha) / alpha ||(I - T)x - (I - T)z||^2

    on ``num_pairs`` random pairs. Even-numbered pairs are independent
    uniform draws in ``[low, high]``; odd-numbered pairs put ``z`` at a
    Gaussian offset of scale ``local_scale`` from ``x`` to probe the local
    slope of ``T``, which is where saturated coordinates expose a too-small
    ``alpha``.

    Returns
    -------
    (bool, float)
        Pass flag and the worst violation relative to ``||x - z||^2``
        (negative values mean every pair satisfied the inequality).
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    shape = problem.shape
    worst = -np.inf
    for i in range(num_pairs):
        x = rng.uniform(low, high, shape)
        if i % 2 == 0:
            z = rng.uniform(low, high, shape)
        else:
            z = x + local_scale * rng.standard_normal(shape)
        tx = network_map(layers, problem, x)
        tz = network_map(layers, problem, z)
        d2 = float(np.sum((x - z) ** 2))
        lhs = float(np.sum((tx - tz) ** 2))
        res = float(np.sum(((x - tx) - (z - tz)) ** 2))
        violation = (lhs - d2 + (1 - alpha) / alpha * res) / d2
        worst = max(worst, violation)
    return bool(worst <= slack), float(worst)
