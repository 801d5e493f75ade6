"""Unfolded proximal interior point network.

Layer ``k`` applies

    x_{k+1} = prox_{gamma_k mu_k B}(x_k - gamma_k grad h(x_k, y, lambda_k))

with ``gamma_k = softplus(a_k)``, ``mu_k = softplus(m_k)`` and

    lambda_k = softplus(b_k) sigma_hat(y) / (eta(x_k) + softplus(c_k)),

where ``eta(x_k)`` is the standard deviation of the stacked spatial
gradients of ``x_k`` and ``sigma_hat(y)`` a noise estimate of the input.
Gradients with respect to the four scalars come from the analytic
derivatives of the barrier prox.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier_prox import Box, prox_box
from .imaging import as_image, estimate_noise_std
from .linops import CirculantOperator, ShapeError
from .objective import (DEFAULT_DELTA, DeblurProblem, full_grad,
                        full_hessian_vec, reg_value_grad)
from .solver import initial_point

FORMAT_VERSION = 1


def softplus(z):
    """ln(1 + exp(z)) without overflow."""
    return np.logaddexp(0.0, z)


def softplus_grad(z):
    """Derivative of softplus, the logistic function."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softplus_inv(v):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError("softplus inverse needs positive values")
    return v + np.log(-np.expm1(-v))


@dataclass
class LayerParams:
    """Pre-activation scalars of one layer."""
    a: float
    m: float
    b: float
    c: float

    @property
    def gamma(self) -> float:
        return float(softplus(self.a))

    @property
    def mu(self) -> float:
        return float(softplus(self.m))

    def as_list(self) -> list:
        return [float(self.a), float(self.m), float(self.b), float(self.c)]

    @classmethod
    def from_list(cls, values) -> "LayerParams":
        a, m, b, c = (float(v) for v in values)
        return cls(a, m, b, c)

    @classmethod
    def default(cls, gamma=1.0, mu=0.02, b_val=1.0, c_val=1.0) -> "LayerParams":
        return cls(*(float(softplus_inv(v)) for v in (gamma, mu, b_val, c_val)))

    def copy(self) -> "LayerParams":
        return LayerParams(self.a, self.m, self.b, self.c)


@dataclass
class UnfoldedNetwork:
    """Layer parameters plus the problem template they act on.

    ``sigma`` is the noise policy: ``"estimate"`` runs the wavelet MAD
    estimator on each input, a number uses that value for every input.
    """
    layers: list
    kernel: np.ndarray
    delta: float = DEFAULT_DELTA
    box: Box = field(default_factory=Box)
    sigma: str | float = "estimate"
    x0_margin: float = 0.01
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.kernel = np.array(self.kernel, dtype=np.float64)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.sigma != "estimate" and float(self.sigma) < 0:
            raise ValueError("sigma must be 'estimate' or non-negative")

    @property
    def K(self) -> int:
        return len(self.layers)

    def operator(self, shape) -> CirculantOperator:
        shape = tuple(shape[-2:])
        if shape not in self._ops:
            self._ops[shape] = CirculantOperator(self.kernel, shape)
        return self._ops[shape]

    def problem(self, y) -> DeblurProblem:
        y = as_image(y)
        return DeblurProblem(self.operator(y.shape), y, self.delta, self.box)

    def sigma_hat(self, y) -> float:
        if self.sigma == "estimate":
            return estimate_noise_std(y)
        return float(self.sigma)

    def truncated(self, K: int) -> "UnfoldedNetwork":
        return UnfoldedNetwork([p.copy() for p in self.layers[:K]], self.kernel,
                               self.delta, self.box, self.sigma, self.x0_margin)


def gradient_spread(p: DeblurProblem, x) -> float:
    """Standard deviation of the concatenation of vertical and horizontal
    differences of ``x`` (population convention)."""
    g = p.grads.vertical.apply(x)
    h = p.grads.horizontal.apply(x)
    return float(np.std(np.concatenate([g.ravel(), h.ravel()])))


def lambda_struct(params: LayerParams, x_k, sigma_hat: float, p: DeblurProblem,
                  eta: float | None = None):
    """Regularization weight of a layer and its partials in ``b`` and ``c``.

    Returns ``(lambda, dlambda_db, dlambda_dc)``.
    """
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be non-negative")
    if eta is None:
        eta = gradient_spread(p, x_k)
    sb, sc = float(softplus(params.b)), float(softplus(params.c))
    denom = eta + sc
    lam = sb * sigma_hat / denom
    d_b = float(softplus_grad(params.b)) * sigma_hat / denom
    d_c = -lam * float(softplus_grad(params.c)) / denom
    return lam, d_b, d_c


@dataclass
class LayerCache:
    problem: DeblurProblem
    params: LayerParams
    x_k: np.ndarray
    grad_h: np.ndarray
    grad_reg: np.ndarray
    jac_diag: np.ndarray
    dphi_dmu: np.ndarray
    dphi_dgamma: np.ndarray
    gamma: float
    mu: float
    lam: float
    dlam_db: float
    dlam_dc: float


@dataclass
class LayerGrads:
    a: float
    m: float
    b: float
    c: float
    x: np.ndarray | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.m, self.b, self.c])


def layer_forward(net: UnfoldedNetwork, k: int, x_k, y, sigma_hat: float,
                  eta: float | None = None, problem: DeblurProblem | None = None):
    """Apply layer ``k``; returns ``(x_next, cache)`` for :func:`layer_vjp`."""
    params = net.layers[k]
    p = problem if problem is not None else net.problem(y)
    x_k = p._check(x_k)
    gamma, mu = params.gamma, params.mu
    lam, d_b, d_c = lambda_struct(params, x_k, sigma_hat, p, eta)
    if lam > 0:
        _, grad_reg = reg_value_grad(p, x_k)
    else:
        grad_reg = np.zeros_like(x_k)
    grad_h = full_grad(p, x_k, 0.0) + lam * grad_reg
    res = prox_box(x_k - gamma * grad_h, p.box, mu, gamma)
    cache = LayerCache(p, params, x_k, grad_h, grad_reg, res.jac_x.diag,
                       res.grad_mu, res.grad_gamma, gamma, mu, lam, d_b, d_c)
    return res.value, cache


def layer_vjp(cache: LayerCache | None, upstream, want_x: bool = False) -> LayerGrads:
    """Pull ``upstream`` (gradient w.r.t. the layer output) back to the
    layer's pre-activation scalars and optionally to its input.

    ``eta(x_k)`` is held constant in the input gradient.
    """
    if cache is None:
        raise ValueError("layer_vjp needs the cache from layer_forward")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.x_k.shape:
        raise ShapeError("upstream gradient shape mismatch")
    w = cache.jac_diag * upstream  # J^T upstream (J is diagonal)
    d_gamma = float(np.sum(upstream * cache.dphi_dgamma) - np.sum(w * cache.grad_h))
    d_mu = float(np.sum(upstream * cache.dphi_dmu))
    d_lam = -cache.gamma * float(np.sum(w * cache.grad_reg))
    p = cache.params
    grads = LayerGrads(
        a=d_gamma * float(softplus_grad(p.a)),
        m=d_mu * float(softplus_grad(p.m)),
        b=d_lam * cache.dlam_db,
        c=d_lam * cache.dlam_dc,
    )
    if want_x:
        grads.x = w - cache.gamma * full_hessian_vec(
            cache.problem, cache.x_k, w, cache.lam)
    return grads


def initial_estimate(net: UnfoldedNetwork, y) -> np.ndarray:
    return initial_point(as_image(y), net.box, net.x0_margin)


def infer(net: UnfoldedNetwork, y, return_path: bool = False):
    """Run all layers on observation ``y``.

    With ``return_path`` the per-layer ``(gamma, mu, lambda)`` values are
    returned as a second output.
    """
    y = as_image(y)
    p = net.problem(y)
    sigma_hat = net.sigma_hat(y)
    x = initial_estimate(net, y)
    path = []
    for k in range(net.K):
        x, cache = layer_forward(net, k, x, y, sigma_hat, problem=p)
        path.append((cache.gamma, cache.mu, cache.lam))
    return (x, path) if return_path else x


# ---------------------------------------------------------------------------
# model files

def model_to_dict(net: UnfoldedNetwork) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "K": net.K,
        "delta": float(net.delta),
        "box": [net.box.x_min, net.box.x_max],
        "kernel": [[float(v) for v in row] for row in net.kernel],
        "sigma": net.sigma if net.sigma == "estimate" else float(net.sigma),
        "x0_margin": float(net.x0_margin),
        "layers": [p.as_list() for p in net.layers],
    }


def model_from_dict(d: dict) -> UnfoldedNetwork:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    layers = [LayerParams.from_list(v) for v in d["layers"]]
    if len(layers) != d["K"]:
        raise ValueError("model K does not match the number of layers")
    return UnfoldedNetwork(
        layers=layers,
        kernel=np.array(d["kernel"], dtype=np.float64),
        delta=float(d["delta"]),
        box=Box(*d["box"]),
        sigma=d.get("sigma", "estimate"),
        x0_margin=float(d.get("x0_margin", 0.01)),
    )


def save_model(path, net: UnfoldedNetwork) -> None:
    """Write the model as JSON. Floats use the shortest repr that
    round-trips exactly."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(model_to_dict(net), indent=1) + "\n")
    tmp.replace(path)


def load_model(path) -> UnfoldedNetwork:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a valid model file ({exc})") from None
    return model_from_dict(d)
