"""Greedy layer-wise training of the unfolded network.

Layer ``k`` is trained alone on the outputs of the already trained layers
``0..k-1``, minimizing the negative SSIM of its output against the ground
truth with Adam on its four pre-activation scalars.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imaging import as_image, ssim, ssim_and_grad
from .unfolded import (LayerParams, UnfoldedNetwork, initial_estimate,
                       layer_forward, layer_vjp)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_per_layer: int = 40
    learning_rate: float = 0.01
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    K: int = 10
    lr_decay: dict = field(default_factory=lambda: {"factor": 1.0, "every_n_epochs": 10})
    init: list = field(default_factory=lambda: [1.0, 0.02, 1.0, 1.0])
    workers: int = 1

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.epochs_per_layer < 1 or self.batch_size < 1 or self.K < 0:
            raise ValueError("epochs_per_layer and batch_size must be >= 1, K >= 0")
        if not self.learning_rate > 0 or not self.adam_eps > 0:
            raise ValueError("learning_rate and adam_eps must be positive")
        if not all(0 <= b < 1 for b in self.adam_betas):
            raise ValueError("adam betas must lie in [0, 1)")
        if not 0 < self.lr_decay["factor"] <= 1 or self.lr_decay["every_n_epochs"] < 1:
            raise ValueError("lr_decay needs factor in (0, 1] and every_n_epochs >= 1")
        if len(self.init) != 4 or min(self.init) <= 0:
            raise ValueError("init must hold four positive values "
                             "(gamma, mu, softplus(b), softplus(c))")

    def lr_at(self, epoch: int) -> float:
        steps = epoch // self.lr_decay["every_n_epochs"]
        return self.learning_rate * self.lr_decay["factor"] ** steps

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params, grads, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8, context: str = ""):
    """One bias-corrected Adam update; ``state`` is updated in place."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.m.shape or params.shape != grads.shape:
        raise ValueError("Adam state, params and grads must have equal shapes")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(f"non-finite gradient {grads.tolist()} {context}".strip())
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * grads
    state.v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # (layer, epoch, mean_train_ssim, loss)
    input_ssim: float | None = None  # mean train SSIM of the initial estimates

    def layer_rows(self, k: int) -> list:
        return [r for r in self.rows if r[0] == k]

    def final_ssim_per_layer(self) -> list:
        layers = sorted({r[0] for r in self.rows})
        return [self.layer_rows(k)[-1][2] for k in layers]

    def write_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "epoch", "mean_train_ssim", "loss"])
            for k, e, s, loss in self.rows:
                w.writerow([k, e, repr(float(s)), repr(float(loss))])
        tmp.replace(path)


def _member(args):
    """Forward and backward pass of one image through one layer."""
    net, k, x, y, sigma_hat, truth, want_grad = args
    out, cache = layer_forward(net, k, x, y, sigma_hat)
    if not want_grad:
        return out, ssim(out, truth), None
    value, g = ssim_and_grad(out, truth)
    grads = layer_vjp(cache, -g).as_array()
    return out, value, grads


class _Runner:
    def __init__(self, workers: int):
        self.pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def map(self, fn, jobs):
        if self.pool is None:
            return [fn(j) for j in jobs]
        return list(self.pool.map(fn, jobs))  # results keep job order

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _check_dataset(dataset):
    if not dataset:
        raise ValueError("training dataset is empty")
    pairs = [(as_image(t), as_image(y)) for t, y in dataset]
    shape = pairs[0][0].shape
    for t, y in pairs:
        if t.shape != shape or y.shape != shape:
            raise ValueError(f"dataset shape mismatch: {t.shape}/{y.shape} vs {shape}")
    return pairs


def train_greedy(dataset, cfg: TrainConfig, template: UnfoldedNetwork):
    """Train ``cfg.K`` layers greedily.

    Parameters
    ----------
    dataset : list of (truth, degraded) pairs
    cfg : TrainConfig
    template : UnfoldedNetwork
        Supplies the kernel, delta, box and noise policy; its layers are
        ignored.

    Returns
    -------
    (UnfoldedNetwork, TrainReport)
        The report holds one row per (layer, epoch) with the mean train
        SSIM over the full set; epoch 0 is the evaluation before any
        update of that layer.
    """
    pairs = _check_dataset(dataset)
    truths = [t for t, _ in pairs]
    ys = [y for _, y in pairs]
    net = template.truncated(0)
    sigmas = [net.sigma_hat(y) for y in ys]
    xs = [initial_estimate(net, y) for y in ys]
    report = TrainReport(input_ssim=float(np.mean(
        [ssim(x, t) for x, t in zip(xs, truths)])))
    rng = np.random.default_rng(cfg.seed)
    params = LayerParams.default(*cfg.init)
    runner = _Runner(cfg.workers)
    n = len(pairs)
    try:
        for k in range(cfg.K):
            params = params.copy()
            net.layers.append(params)

            def evaluate(want_grad_idx=None):
                idx = range(n) if want_grad_idx is None else want_grad_idx
                jobs = [(net, k, xs[i], ys[i], sigmas[i], truths[i],
                         want_grad_idx is not None) for i in idx]
                return runner.map(_member, jobs)

            def log_epoch(epoch):
                res = evaluate()
                mean_ssim = float(np.mean([r[1] for r in res]))
                report.rows.append((k, epoch, mean_ssim, -mean_ssim))
                return res

            log_epoch(0)
            state = AdamState.zeros(4)
            for epoch in range(cfg.epochs_per_layer):
                lr = cfg.lr_at(epoch)
                order = rng.permutation(n)
                for step, start in enumerate(range(0, n, cfg.batch_size)):
                    batch = order[start:start + cfg.batch_size]
                    res = evaluate(batch)
                    grad = np.sum([r[2] for r in res], axis=0) / len(batch)
                    new = adam_step(params.as_list(), grad, state, lr,
                                    cfg.adam_betas, cfg.adam_eps,
                                    context=f"(layer {k}, epoch {epoch}, step {step})")
                    params.a, params.m, params.b, params.c = (float(v) for v in new)
                res = log_epoch(epoch + 1)
                if not np.isfinite(report.rows[-1][3]):
                    raise TrainingError(f"non-finite loss at layer {k}, epoch {epoch}")
            log.info("layer %d: gamma=%.4g mu=%.4g mean train SSIM %.4f",
                     k, params.gamma, params.mu, report.rows[-1][2])
            xs = [r[0] for r in res]
    finally:
        runner.close()
    return net, report
