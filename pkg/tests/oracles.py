"""Independent reference implementations used by the test-suite.

Nothing here calls into the package's closed forms: convolutions are
direct sums, proximity operators are found by numerical minimization and
derivatives by central differences.
"""

import itertools

import numpy as np

from ipunfold.barrier_prox import Affine, Ball, Box, Hyperslab


def periodic_conv_direct(x, kernel):
    """Periodic convolution by a centered kernel, as a direct double sum."""
    x = np.asarray(x, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    kh, kw = kernel.shape
    H, W = x.shape[-2:]
    out = np.zeros_like(x)
    for i in range(H):
        for j in range(W):
            acc = 0.0
            for p in range(kh):
                for q in range(kw):
                    acc = acc + kernel[p, q] * x[..., (i - (p - kh // 2)) % H,
                                                 (j - (q - kw // 2)) % W]
            out[..., i, j] = acc
    return out


def rel_err(approx, exact, floor=1e-12):
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = max(np.linalg.norm(exact), np.linalg.norm(approx), floor)
    return float(np.linalg.norm(approx - exact) / scale)


def central_diff(f, x, direction, h):
    return (np.asarray(f(x + h * direction)) - np.asarray(f(x - h * direction))) / (2 * h)


def central_diff_scalar(f, t, h):
    return (np.asarray(f(t + h)) - np.asarray(f(t - h))) / (2 * h)


# ---------------------------------------------------------------------------
# barrier objective, written out directly from the constraint definitions

def barrier_value(u, spec):
    u = np.asarray(u, dtype=float)
    if isinstance(spec, Affine):
        m = [spec.b - spec.a @ u]
    elif isinstance(spec, Hyperslab):
        t = spec.a @ u
        m = [spec.b_max - t, t - spec.b_min]
    elif isinstance(spec, Ball):
        m = [spec.alpha - np.sum((u - spec.center) ** 2)]
    elif isinstance(spec, Box):
        m = list(spec.x_max - u) + list(u - spec.x_min)
    else:
        raise TypeError(spec)
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        return np.inf
    return float(-np.sum(np.log(m)))


def prox_objective(u, x, spec, gm):
    b = barrier_value(u, spec)
    if not np.isfinite(b):
        return np.inf
    return 0.5 * float(np.sum((np.asarray(u) - x) ** 2)) + gm * b


def _feasible_grid(x, spec, n, pts=41):
    """Candidate points covering a box around the feasible set and x."""
    if isinstance(spec, Box):
        lo = np.full(n, spec.x_min)
        hi = np.full(n, spec.x_max)
    elif isinstance(spec, Ball):
        r = np.sqrt(spec.alpha)
        lo, hi = spec.center - r, spec.center + r
    else:
        span = 3.0 + np.abs(x).max() + 3.0 * np.max(np.abs(
            [getattr(spec, k) for k in ("b", "b_min", "b_max") if hasattr(spec, k)]))
        lo, hi = x - span, x + span
    axes = [np.linspace(lo[i], hi[i], pts)[1:-1] for i in range(n)]
    grid = [np.array(p) for p in itertools.product(*axes)]
    # thin feasible sets can fall between grid nodes; add one interior seed
    if isinstance(spec, Affine):
        na2 = spec.a @ spec.a
        seed = x - (max(spec.a @ x - spec.b, 0.0) + 1.0) * spec.a / na2
    elif isinstance(spec, Hyperslab):
        mid = 0.5 * (spec.b_min + spec.b_max)
        seed = x + (mid - spec.a @ x) * spec.a / (spec.a @ spec.a)
    elif isinstance(spec, Ball):
        seed = spec.center.copy()
    else:
        seed = np.full(n, 0.5 * (spec.x_min + spec.x_max))
    return grid + [seed]


def _margins_with_derivs(u, spec):
    """Constraint margins m_i(u) > 0 with their gradients and Hessians."""
    n = u.size
    if isinstance(spec, Affine):
        return [(spec.b - spec.a @ u, -spec.a, np.zeros((n, n)))]
    if isinstance(spec, Hyperslab):
        t = spec.a @ u
        return [(spec.b_max - t, -spec.a, np.zeros((n, n))),
                (t - spec.b_min, spec.a, np.zeros((n, n)))]
    if isinstance(spec, Ball):
        v = u - spec.center
        return [(spec.alpha - v @ v, -2.0 * v, -2.0 * np.eye(n))]
    out = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out.append((spec.x_max - u[i], -e, np.zeros((n, n))))
        out.append((u[i] - spec.x_min, e, np.zeros((n, n))))
    return out


def _newton_refine(u, x, spec, gm, iters=200):
    """Damped Newton on 0.5||u-x||^2 - gm sum log m_i(u), staying feasible."""
    f = lambda z: prox_objective(z, x, spec, gm)
    n = u.size
    for _ in range(iters):
        g = u - x
        Hm = np.eye(n)
        for m, dm, d2m in _margins_with_derivs(u, spec):
            g = g - gm * dm / m
            Hm = Hm + gm * (np.outer(dm, dm) / m ** 2 - d2m / m)
        step = np.linalg.solve(Hm, g)
        t, f0 = 1.0, f(u)
        while t > 1e-20:
            cand = u - t * step
            if f(cand) <= f0 - 1e-4 * t * (g @ step) or np.linalg.norm(t * step) < 1e-15:
                break
            t *= 0.5
        if not np.isfinite(f(cand)):
            break
        u = cand
        if np.linalg.norm(t * step) <= 1e-15 * (1 + np.linalg.norm(u)):
            break
    return u


def brute_force_prox(x, spec, gm):
    """Minimize 0.5||x-u||^2 + gm*B(u): grid search for a feasible start,
    then damped Newton on the barrier objective."""
    x = np.asarray(x, dtype=float)
    n = x.size
    f = lambda u: prox_objective(u, x, spec, gm)
    best = min(_feasible_grid(x, spec, n, pts=21 if n <= 2 else 5), key=f)
    if not np.isfinite(f(best)):
        raise RuntimeError("grid search found no feasible point")
    return _newton_refine(best, x, spec, gm)


def bisect_root(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# theta recursion, written as the explicit sum over index subsets

def theta_bruteforce(W_list):
    """theta_k from the explicit sum over 0 <= j_0 < ... < j_l <= k-1 with
    dense matrices and spectral norms."""
    K = len(W_list)
    n = W_list[0].shape[0]

    def block(hi, lo):  # W_hi o ... o W_lo
        M = np.eye(n)
        for j in range(lo, hi + 1):
            M = W_list[j] @ M
        return np.linalg.norm(M, 2)

    thetas = []
    for k in range(K):
        total = block(k, 0)
        for size in range(1, k + 1):
            for js in itertools.combinations(range(k), size):
                term = block(k, js[-1] + 1)
                for a in range(len(js) - 1, 0, -1):
                    term *= block(js[a], js[a - 1] + 1)
                term *= block(js[0], 0)
                total += term
        thetas.append(total)
    return np.array(thetas)


# ---------------------------------------------------------------------------
# random instances shared by unit and acceptance tests

VARIANTS = ("affine", "hyperslab", "ball", "box")


def random_instance(kind, rng, n=None, param_range=(1e-4, 10.0)):
    """(x, spec, mu, gamma) with x spread around the constraint boundary."""
    n = int(rng.integers(1, 6)) if n is None else n
    mu, gamma = rng.uniform(*param_range, size=2)
    if kind == "affine":
        a = rng.standard_normal(n)
        spec = Affine(a, rng.standard_normal())
        x = rng.standard_normal(n) * 2.0
    elif kind == "hyperslab":
        a = rng.standard_normal(n)
        lo = rng.standard_normal()
        spec = Hyperslab(a, lo, lo + rng.uniform(0.1, 3.0))
        x = rng.standard_normal(n) * 2.0
    elif kind == "ball":
        c = rng.standard_normal(n)
        spec = Ball(c, rng.uniform(0.1, 4.0))
        x = c + rng.standard_normal(n) * 2.0
    else:
        lo = rng.uniform(-1.0, 0.0)
        spec = Box(lo, lo + rng.uniform(0.5, 2.0))
        x = rng.uniform(lo - 2.0, spec.x_max + 2.0, n)
    return x, spec, float(mu), float(gamma)


def _margin_scales(u, spec):
    """Magnitude of the largest term entering each margin; the rounding of
    that term bounds how well the margin of a float64 point is known."""
    if isinstance(spec, Affine):
        return [max(abs(spec.b), np.abs(spec.a) @ np.abs(u))]
    if isinstance(spec, Hyperslab):
        t = np.abs(spec.a) @ np.abs(u)
        return [max(abs(spec.b_max), t), max(abs(spec.b_min), t)]
    if isinstance(spec, Ball):
        return [max(spec.alpha, float(np.sum((u - spec.center) ** 2)))]
    out = []
    for ui in u:
        out += [max(abs(spec.x_max), abs(ui)), max(abs(spec.x_min), abs(ui))]
    return out


def stationarity_floor(x, spec, gm, u):
    """Change in the prox stationarity residual caused by a one-ulp error in
    each constraint margin at ``u``. A residual within a small multiple of
    this is as good as float64 allows."""
    u = np.asarray(u, dtype=float)
    total = 0.0
    for (m, dm, _), scale in zip(_margins_with_derivs(u, spec), _margin_scales(u, spec)):
        total += gm * np.linalg.norm(dm) * np.spacing(scale) / m ** 2
    return float(total)
