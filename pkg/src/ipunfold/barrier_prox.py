"""Proximity operators of logarithmic barriers and their derivatives.

For a constraint set C = {u : c_i(u) > 0} with barrier B(u) = -sum ln c_i(u),
the functions here evaluate ``phi = prox_{gamma*mu*B}(x)`` in closed form for
four families (half-space, hyperslab, Euclidean ball, per-pixel box) along
with the Jacobian of ``phi`` with respect to ``x`` and its partial
derivatives with respect to ``mu`` and ``gamma``.

Hyperslab and ball reduce, after centering and scaling, to the same cubic

    P(s) = (s**2 - 1) * (s - d) - 2 * g * s,

which has exactly one root in (-1, 1) whenever g > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConstraintError(ValueError):
    """Invalid constraint parameters (zero normal vector, empty interval...)."""


class IllPosedCubicError(ValueError):
    """The cubic does not have exactly one root in the requested interval."""


class DerivativeDegeneracyError(ArithmeticError):
    """An implicit-function denominator vanished numerically."""


# ---------------------------------------------------------------------------
# constraint specifications

@dataclass(frozen=True)
class Affine:
    """Half-space ``a^T u <= b``."""
    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64).ravel()
        if not np.any(a):
            raise ConstraintError("half-space normal a must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def margins(self, u):
        return np.array([self.b - self.a @ u])

    def barrier_grad(self, u):
        return self.a / (self.b - self.a @ u)


@dataclass(frozen=True)
class Hyperslab:
    """Slab ``b_min <= a^T u <= b_max``."""
    a: np.ndarray
    b_min: float
    b_max: float

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64).ravel()
        if not np.any(a):
            raise ConstraintError("hyperslab normal a must be nonzero")
        if not self.b_min < self.b_max:
            raise ConstraintError("hyperslab requires b_min < b_max")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b_min", float(self.b_min))
        object.__setattr__(self, "b_max", float(self.b_max))

    def margins(self, u):
        t = self.a @ u
        return np.array([self.b_max - t, t - self.b_min])

    def barrier_grad(self, u):
        t = self.a @ u
        return self.a * (1.0 / (self.b_max - t) - 1.0 / (t - self.b_min))


@dataclass(frozen=True)
class Ball:
    """Euclidean ball ``||u - center||^2 <= alpha`` (alpha is the squared
    radius)."""
    center: np.ndarray
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConstraintError("ball requires alpha > 0")
        object.__setattr__(self, "center",
                           np.array(self.center, dtype=np.float64).ravel())
        object.__setattr__(self, "alpha", float(self.alpha))

    def margins(self, u):
        v = u - self.center
        return np.array([self.alpha - v @ v])

    def barrier_grad(self, u):
        v = u - self.center
        return 2.0 * v / (self.alpha - v @ v)


@dataclass(frozen=True)
class Box:
    """Per-coordinate bounds ``x_min <= u_i <= x_max``."""
    x_min: float = 0.0
    x_max: float = 1.0

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ConstraintError("box requires x_min < x_max")
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    def margins(self, u):
        u = np.asarray(u)
        return np.concatenate([(self.x_max - u).ravel(),
                               (u - self.x_min).ravel()])

    def barrier_grad(self, u):
        return 1.0 / (self.x_max - u) - 1.0 / (u - self.x_min)


# ---------------------------------------------------------------------------
# structured Jacobians

@dataclass
class RankOneJacobian:
    """``scale * (I + u v^T)``; never materialized unless asked."""
    scale: float
    u: np.ndarray
    v: np.ndarray

    def matvec(self, w):
        return self.scale * (w + self.u * (self.v @ w))

    def rmatvec(self, w):
        return self.scale * (w + self.v * (self.u @ w))

    def todense(self):
        n = self.u.size
        return self.scale * (np.eye(n) + np.outer(self.u, self.v))


@dataclass
class DiagonalJacobian:
    diag: np.ndarray

    def matvec(self, w):
        return self.diag * w

    rmatvec = matvec

    def todense(self):
        return np.diag(self.diag.ravel())


@dataclass
class ProxResult:
    value: np.ndarray
    jac_x: RankOneJacobian | DiagonalJacobian | None = None
    grad_mu: np.ndarray | None = None
    grad_gamma: np.ndarray | None = None
    kappa: float | np.ndarray | None = None
    extras: dict = field(default_factory=dict, repr=False)


# ---------------------------------------------------------------------------
# cubic roots

_TIE_TOL = 1e-12


def _real_roots(c3, c2, c1, c0):
    """All real roots of c3 z^3 + c2 z^2 + c1 z + c0 (NaN where complex).

    Returns the roots stacked on a trailing axis of length 3 and a mask of
    near-degenerate discriminants.
    """
    b, c, d = c2 / c3, c1 / c3, c0 / c3
    p = c - b * b / 3.0
    q = 2.0 * b ** 3 / 27.0 - b * c / 3.0 + d
    shift = -b / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    scale = (q / 2.0) ** 2 + np.abs(p / 3.0) ** 3
    degenerate = np.abs(disc) <= _TIE_TOL * np.where(scale > 0, scale, 1.0)

    roots = np.full(np.shape(disc) + (3,), np.nan)

    one = disc > 0
    if np.any(one):
        qo, do = q[one], disc[one]
        # stable Cardano: pick the cube root without cancellation
        big = -np.copysign(np.cbrt(np.abs(qo) / 2.0 + np.sqrt(do)), qo)
        big = np.where(big == 0, np.cbrt(-qo), big)
        with np.errstate(divide="ignore", invalid="ignore"):
            small = np.where(big != 0, -p[one] / (3.0 * big), 0.0)
        roots[one, 0] = big + small + shift[one]

    three = ~one
    if np.any(three):
        pt, qt = p[three], q[three]
        r = 2.0 * np.sqrt(np.maximum(-pt / 3.0, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            cos_arg = np.where(r > 0, 4.0 * qt / np.where(r > 0, r, 1.0) ** 3, 0.0)
        # q = 2 (r/2)^3 cos(3 theta) -> cos(3 theta) = -4 q / r^3 with sign
        theta = np.arccos(np.clip(-cos_arg, -1.0, 1.0)) / 3.0
        for k in range(3):
            roots[three, k] = (r * np.cos(theta - 2.0 * np.pi * k / 3.0)
                               + shift[three])

    # The formulas lose accuracy on the small roots when roots are widely
    # separated; keep only the largest one, polish it, and deflate.
    r1 = np.take_along_axis(
        roots, np.nanargmax(np.abs(roots), axis=-1)[..., None], axis=-1)[..., 0]
    mono = (np.ones_like(b), b, c, d)
    for _ in range(2):
        dp = _dpoly(mono, r1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dp != 0, _poly(mono, r1) / dp, 0.0)
        r1 = np.where(np.isfinite(step), r1 - step, r1)
    qb = b + r1
    with np.errstate(divide="ignore", invalid="ignore"):
        qc = np.where(r1 != 0, -d / r1, c + r1 * qb)
    disc2 = qb * qb - 4.0 * qc
    real2 = disc2 >= 0
    sq = np.sqrt(np.where(real2, disc2, 0.0))
    t = -0.5 * (qb + np.copysign(sq, qb))
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(real2, t, np.nan)
        r3 = np.where(real2, np.where(t != 0, qc / t, 0.0), np.nan)
    return np.stack([r1, r2, r3], axis=-1), degenerate


def _poly(coefs, z):
    c3, c2, c1, c0 = coefs
    return ((c3 * z + c2) * z + c1) * z + c0


def _dpoly(coefs, z):
    c3, c2, c1, _ = coefs
    return (3.0 * c3 * z + 2.0 * c2) * z + c1


def _guarded_newton(f, df, z, lo, hi, steps=1):
    """Newton steps kept only where they stay inside and do not worsen |f|."""
    for _ in range(steps):
        fz = f(z)
        dfz = df(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = z - fz / dfz
        ok = np.isfinite(cand) & (cand >= lo) & (cand <= hi)
        ok &= np.abs(f(np.where(ok, cand, z))) <= np.abs(fz)
        z = np.where(ok, cand, z)
    return z


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    a, b = lo.copy(), hi.copy()
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        left = np.sign(fm) == np.sign(flo)
        a = np.where(left, m, a)
        flo = np.where(left, fm, flo)
        b = np.where(left, b, m)
        if np.all((b - a) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(a))):
            break
    return 0.5 * (a + b)


def cubic_root_in_interval(c3, c2, c1, c0, lo, hi, closed_lo=False,
                           evaluate=None, known_unique=False):
    """Unique root of ``c3 z^3 + c2 z^2 + c1 z + c0`` in ``(lo, hi)``.

    All arguments broadcast, so the same call solves many cubics at once.
    The three roots are obtained from the Cardano / trigonometric formulas
    and the admissible one is chosen by interval membership, then polished
    by one guarded Newton step. Near-degenerate discriminants, or roots that
    tie within 1e-12, fall back to bisection on a sign-changing bracket.

    Parameters
    ----------
    closed_lo : bool
        Accept ``lo`` itself as a root (the ball case at its center).
    evaluate : (callable, callable), optional
        Accurate evaluators ``f(z)`` and ``f'(z)`` of the same cubic over the
        full (flattened) batch, e.g. a factored form. Used for the bracket
        test, bisection and Newton polishing instead of the monomial form.
    known_unique : bool
        The caller guarantees exactly one root in the interval. Extra
        candidates are then rounding artifacts of roots sitting just outside
        an endpoint, and the bracket is bisected instead of raising.

    Raises
    ------
    IllPosedCubicError
        If no root, or several well-separated roots, lie in the interval.
    """
    c3, c2, c1, c0, lo, hi = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (c3, c2, c1, c0, lo, hi)))
    scalar = c3.ndim == 0
    c3, c2, c1, c0, lo, hi = (np.atleast_1d(v).astype(np.float64)
                              for v in (c3, c2, c1, c0, lo, hi))
    if np.any(c3 == 0):
        raise IllPosedCubicError("leading coefficient is zero")
    if np.any(~(lo < hi)):
        raise IllPosedCubicError("empty interval")
    coefs = (c3, c2, c1, c0)

    roots, degenerate = _real_roots(c3, c2, c1, c0)
    tol = _TIE_TOL * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    lo3, hi3 = lo[..., None], hi[..., None]
    above = (roots >= lo3) if closed_lo else (roots > lo3)
    inside = above & (roots < hi3) & np.isfinite(roots)
    count = inside.sum(axis=-1)
    hi_pick = np.where(inside, roots, -np.inf).max(axis=-1)
    lo_pick = np.where(inside, roots, np.inf).min(axis=-1)
    tie = (count >= 2) & (hi_pick - lo_pick <= tol)
    z = np.where(count >= 1,
                 np.where(inside, roots, 0.0).sum(axis=-1) / np.maximum(count, 1),
                 np.nan)

    if evaluate is None:
        f, df = (lambda t: _poly(coefs, t)), (lambda t: _dpoly(coefs, t))
    else:
        f, df = evaluate
    f_lo, f_hi = f(lo), f(hi)
    bracket = (f_lo * f_hi < 0) | (closed_lo & (f_lo == 0))
    separated = (count >= 2) & ~tie
    fallback = degenerate | tie | (count == 0)
    if known_unique:
        fallback |= separated
    elif np.any(separated & ~degenerate):
        raise IllPosedCubicError("several roots lie in the interval")
    bad = fallback & ~bracket
    if np.any(bad):
        raise IllPosedCubicError("no root could be isolated in the interval")

    if np.any(fallback):
        z_fb = _bisect(f, lo, hi)
        if closed_lo:
            z_fb = np.where(f_lo == 0, lo, z_fb)
        z = np.where(fallback, z_fb, z)

    z = np.clip(z, lo, hi)
    z = _guarded_newton(f, df, z, lo, hi)
    return float(z[0]) if scalar else z


def _symmetric_root(d, g, lo):
    """Root of (s^2 - 1)(s - d) - 2 g s in (lo, 1); lo is -1 or 0."""
    d = np.asarray(d, dtype=np.float64)
    g = np.broadcast_to(np.asarray(g, dtype=np.float64), d.shape)

    # the factored form stays accurate when |d| is large
    def f(t):
        return (t - 1.0) * (t + 1.0) * (t - d) - 2.0 * g * t

    def df(t):
        return (3.0 * t - 2.0 * d) * t - 1.0 - 2.0 * g

    s = cubic_root_in_interval(1.0, -d, -(1.0 + 2.0 * g), d,
                               np.full(d.shape, float(lo)), np.ones(d.shape),
                               closed_lo=(lo == 0), evaluate=(f, df),
                               known_unique=True)
    s = np.asarray(s, dtype=np.float64)
    s = _guarded_newton(f, df, s, float(lo), 1.0, steps=3)
    upper = np.nextafter(1.0, -np.inf)
    lower = float(lo) if lo == 0 else np.nextafter(-1.0, np.inf)
    return np.clip(s, lower, upper)


def _boundary_gap(d, g, s):
    """``1 - |s|`` for a root ``s`` of ``_symmetric_root``, to relative accuracy.

    Forming ``1 - |s|`` from the rounded root loses digits when ``s`` is near
    +-1, which is exactly where the barrier term is large. With ``s = sign *
    (1 - e)`` the cubic becomes ``e (2 - e) (sign*d - 1 + e) - 2 g (1 - e)``,
    and a Newton step on that form fixes ``e`` relative to its own size.
    """
    d = np.asarray(d, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    g = np.broadcast_to(np.asarray(g, dtype=np.float64), d.shape)
    dd = np.where(s < 0, -d, d)

    def f(e):
        return e * (2.0 - e) * (dd - 1.0 + e) - 2.0 * g * (1.0 - e)

    def df(e):
        return (2.0 - 2.0 * e) * (dd - 1.0 + e) + e * (2.0 - e) + 2.0 * g

    e = _guarded_newton(f, df, 1.0 - np.abs(s), 0.0, 1.0, steps=2)
    return np.maximum(e, np.finfo(np.float64).tiny)


# ---------------------------------------------------------------------------
# proximity operators

def _check_positive(mu, gamma):
    if not (np.isfinite(mu) and mu > 0):
        raise ValueError(f"mu must be positive, got {mu}")
    if not (np.isfinite(gamma) and gamma > 0):
        raise ValueError(f"gamma must be positive, got {gamma}")


def prox_affine(x, spec: Affine, mu, gamma, want_derivs=True) -> ProxResult:
    """Barrier prox for the half-space ``a^T u <= b`` (closed form)."""
    _check_positive(mu, gamma)
    x = np.asarray(x, dtype=np.float64)
    a = spec.a
    na2 = a @ a
    gm = gamma * mu
    d = spec.b - a @ x
    root = np.sqrt(d * d + 4.0 * gm * na2)
    # d - root without cancellation when d > 0
    step = -4.0 * gm * na2 / (d + root) if d > 0 else d - root
    value = x + step / (2.0 * na2) * a
    # keep strictly feasible under rounding
    excess = a @ value - spec.b
    if excess >= 0:
        value = value - (excess + np.finfo(float).eps * max(1.0, abs(spec.b))) * a / na2
    result = ProxResult(value=value)
    if want_derivs:
        # 1 + (a^T x - b) / root == 1 - d / root, rewritten for d > 0
        one_minus = (4.0 * gm * na2 / (root * (root + d)) if d > 0
                     else 1.0 - d / root)
        result.jac_x = RankOneJacobian(1.0, -one_minus / (2.0 * na2) * a, a)
        result.grad_mu = -gamma / root * a
        result.grad_gamma = -mu / root * a
    return result


def _slab_derivs(kappa, t, b_min, b_max, gm, na2, mu, gamma):
    prod = (b_max - kappa) * (b_min - kappa)
    lin = b_min + b_max - 2.0 * kappa
    eta = prod - lin * (kappa - t) - 2.0 * gm * na2
    guard = 1e-14 * max(1.0, (b_max - b_min) ** 2)
    if np.any(np.abs(eta) < guard):
        raise DerivativeDegeneracyError(
            "hyperslab derivative denominator eta vanished")
    return prod / eta, -gamma * lin / eta, -mu * lin / eta, eta


def prox_hyperslab(x, spec: Hyperslab, mu, gamma, want_derivs=True) -> ProxResult:
    """Barrier prox for ``b_min <= a^T u <= b_max`` via the cubic root kappa."""
    _check_positive(mu, gamma)
    x = np.asarray(x, dtype=np.float64)
    a = spec.a
    na2 = a @ a
    gm = gamma * mu
    t = a @ x
    mid = 0.5 * (spec.b_min + spec.b_max)
    half = 0.5 * (spec.b_max - spec.b_min)
    d = (t - mid) / half
    g = gm * na2 / half ** 2
    s = float(_symmetric_root(d, g, -1))
    # measure from the nearer bound so the margin keeps its digits
    e = float(_boundary_gap(d, g, s))
    kappa = spec.b_min + half * e if s < 0 else spec.b_max - half * e
    kappa = min(max(kappa, np.nextafter(spec.b_min, np.inf)),
                np.nextafter(spec.b_max, -np.inf))
    value = x + (kappa - t) / na2 * a
    result = ProxResult(value=value, kappa=kappa)
    if want_derivs:
        ratio, dk_mu, dk_gamma, eta = _slab_derivs(
            kappa, t, spec.b_min, spec.b_max, gm, na2, mu, gamma)
        result.jac_x = RankOneJacobian(1.0, (ratio - 1.0) / na2 * a, a)
        result.grad_mu = dk_mu * a
        result.grad_gamma = dk_gamma * a
        result.extras["eta"] = eta
    return result


def prox_ball(x, spec: Ball, mu, gamma, want_derivs=True) -> ProxResult:
    """Barrier prox for ``||u - c||^2 <= alpha``.

    The radius ``kappa = ||phi - c||`` is solved first, then ``phi``, then
    the Sherman-Morrison factor used by the derivatives.
    """
    _check_positive(mu, gamma)
    x = np.asarray(x, dtype=np.float64)
    c, alpha = spec.center, spec.alpha
    gm = gamma * mu
    xc = x - c
    r = np.sqrt(xc @ xc)
    sq = np.sqrt(alpha)
    s = float(_symmetric_root(r / sq, gm / alpha, 0))
    e = float(_boundary_gap(r / sq, gm / alpha, s))
    kappa = sq * (1.0 - e)
    slack = alpha * e * (2.0 - e)                # alpha - kappa^2
    shrink = slack / (slack + 2.0 * gm)
    v = shrink * xc
    value = c + v
    result = ProxResult(value=value, kappa=kappa)
    if want_derivs:
        denom = slack + 2.0 * gm
        sm_den = slack - 2.0 * kappa ** 2 + 2.0 * gm + 2.0 * (v @ xc)
        if abs(sm_den) < 1e-14 * max(1.0, alpha):
            raise DerivativeDegeneracyError(
                "ball Sherman-Morrison denominator vanished")
        # M = I - 2 (x - phi) v^T / sm_den
        u = -2.0 * (x - value) / sm_den
        result.jac_x = RankOneJacobian(slack / denom, u, v)
        mv = v + u * (v @ v)
        result.grad_mu = -2.0 * gamma / denom * mv
        result.grad_gamma = -2.0 * mu / denom * mv
        result.extras["sm_den"] = sm_den
    return result


def prox_box(x, spec: Box, mu, gamma, want_derivs=True) -> ProxResult:
    """Separable barrier prox for ``x_min <= u_i <= x_max``.

    Each coordinate is a scalar hyperslab with ``a = 1``; ``x`` may have any
    shape and all outputs share it.
    """
    _check_positive(mu, gamma)
    x = np.asarray(x, dtype=np.float64)
    lo, hi = spec.x_min, spec.x_max
    gm = gamma * mu
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    d = ((x - mid) / half).ravel()
    s = _symmetric_root(d, gm / half ** 2, -1)
    e = _boundary_gap(d, gm / half ** 2, s)
    kappa = np.where(s < 0, lo + half * e, hi - half * e).reshape(x.shape)
    kappa = np.clip(kappa, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))
    result = ProxResult(value=kappa)
    if want_derivs:
        ratio, dk_mu, dk_gamma, eta = _slab_derivs(
            kappa, x, lo, hi, gm, 1.0, mu, gamma)
        result.jac_x = DiagonalJacobian(ratio)
        result.grad_mu = dk_mu
        result.grad_gamma = dk_gamma
    return result


def prox(x, spec, mu, gamma, want_derivs=True) -> ProxResult:
    """Dispatch on the constraint type."""
    if isinstance(spec, Box):
        return prox_box(x, spec, mu, gamma, want_derivs)
    if isinstance(spec, Affine):
        return prox_affine(x, spec, mu, gamma, want_derivs)
    if isinstance(spec, Hyperslab):
        return prox_hyperslab(x, spec, mu, gamma, want_derivs)
    if isinstance(spec, Ball):
        return prox_ball(x, spec, mu, gamma, want_derivs)
    raise TypeError(f"unsupported constraint {type(spec).__name__}")


def stationarity_residual(x, spec, mu, gamma, value) -> float:
    """Norm of ``phi - x + gamma*mu*grad B(phi)``."""
    x = np.asarray(x, dtype=np.float64)
    r = value - x + gamma * mu * spec.barrier_grad(value)
    return float(np.linalg.norm(np.ravel(r)))
