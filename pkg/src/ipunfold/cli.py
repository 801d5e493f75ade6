"""Command-line interface.

Subcommands: patches, degrade, solve, var-search, train, infer, certify and
metrics. Exit status is 0 on success, 1 on usage errors (bad flags, missing
inputs, malformed config) and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import TEST_SOURCES, TRAIN_SOURCES, random_patches
from .imaging import (DEFAULT_BORDER, DegradationConfig, as_image, degrade,
                      estimate_noise_std, load_png, psnr, save_png, ssim)
from .linops import GradientOperators, identity, kernel_from_spec
from .objective import DEFAULT_DELTA, DeblurProblem, Quadratic
from .solver import IpmSchedule, run_fb_ipm, var_grid_search, write_trace_csv
from .stability import (certify_problem, empirical_averagedness_check,
                        frozen_layers)
from .training import TrainConfig, train_greedy
from .unfolded import (LayerParams, UnfoldedNetwork, infer, load_model,
                       save_model)

log = logging.getLogger("ipunfold")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
IMAGE_SUFFIXES = (".npy", ".png")
DEFAULT_LAMBDA = 1e-5
DEFAULT_GRID = "1e-6,3e-6,1e-5,3e-5,1e-4,3e-4,1e-3"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers

def _field_names(*types) -> set:
    return {f.name for t in types for f in fields(t)}


CONFIG_KEYS = {
    "patches": {"count", "size", "split", "seed"},
    "degrade": _field_names(DegradationConfig),
    "solve": _field_names(IpmSchedule) | {"lambda", "delta", "kernel", "normalize_kernel"},
    "var-search": _field_names(IpmSchedule) | {"lambda_grid", "delta", "kernel",
                                               "normalize_kernel", "border_exclude"},
    "train": _field_names(TrainConfig) | {"kernel", "sigma", "normalize_kernel",
                                          "delta", "noise_policy", "count", "size"},
    "infer": {"layers", "border_exclude", "kernel", "normalize_kernel", "delta"},
    "certify": {"reg", "tightest", "check_pairs", "seed"},
    "metrics": {"border_exclude"},
}


def _load_config(path, command) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - CONFIG_KEYS[command]
    if unknown:
        raise UsageError(f"unknown config keys for '{command}': {sorted(unknown)}; "
                         f"allowed: {sorted(CONFIG_KEYS[command])}")
    return cfg


def _opt(args, cfg, name, default=None):
    """Command-line value, else config value, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _parse_sigma(text):
    if isinstance(text, (int, float)):
        return float(text)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return (float(lo), float(hi))
        return float(text)
    except ValueError:
        raise UsageError(f"--sigma expects a value or lo:hi, got {text!r}") from None


def _parse_grid(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--lambda-grid expects comma-separated numbers, got {text!r}") from None
    if not grid:
        raise UsageError("--lambda-grid is empty")
    return grid


def _kernel(args, cfg):
    spec = _opt(args, cfg, "kernel", "gaussian:1.6")
    normalize = not args.no_normalize and cfg.get("normalize_kernel", True)
    try:
        return kernel_from_spec(spec, normalize=normalize)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _existing(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"input {path} does not exist")
    return path


def _list_images(path) -> list:
    """(name, path) pairs; a ``.npy`` file wins over a PNG of the same name."""
    path = _existing(path)
    if path.is_file():
        return [(path.stem, path)]
    found = {}
    for p in sorted(path.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem not in found or p.suffix.lower() == ".npy":
                found[p.stem] = p
    if not found:
        raise UsageError(f"no .png or .npy images in {path}")
    return sorted(found.items())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return as_image(np.load(path))
    return load_png(path)


def _match_truth(items, truth_path) -> dict:
    truths = dict(_list_images(truth_path))
    if len(items) == 1 and len(truths) == 1 and Path(truth_path).is_file():
        return {items[0][0]: next(iter(truths.values()))}
    missing = [name for name, _ in items if name not in truths]
    if missing:
        raise UsageError(f"no ground truth for {missing} in {truth_path}")
    return truths


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _save_npy(path, x) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npy")
    np.save(tmp, x)
    tmp.replace(path)


def _log_config(command, resolved: dict) -> None:
    log.info("%s config: %s", command, json.dumps(resolved, sort_keys=True, default=str))


def _pool_map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


# ---------------------------------------------------------------------------
# commands

def cmd_patches(args, cfg):
    split = _opt(args, cfg, "split", "train")
    count = int(_opt(args, cfg, "count", 20))
    size = int(_opt(args, cfg, "size", 48))
    seed = int(_opt(args, cfg, "seed", 0))
    _log_config("patches", dict(split=split, count=count, size=size, seed=seed))
    sources = TRAIN_SOURCES if split == "train" else TEST_SOURCES
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, patch in enumerate(random_patches(sources, count, size, seed)):
        save_png(out / f"{split}_{i:03d}.png", patch)
    print(f"wrote {count} patches to {out}")


def cmd_degrade(args, cfg):
    sigma = _parse_sigma(_opt(args, cfg, "sigma", 0.008))
    seed = int(_opt(args, cfg, "seed", 0))
    _log_config("degrade", dict(kernel=_opt(args, cfg, "kernel", "gaussian:1.6"),
                                sigma=sigma, seed=seed))
    try:
        dcfg = DegradationConfig(kernel=_kernel(args, cfg), sigma=sigma, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    items = _list_images(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for index, (name, path) in enumerate(items):
        y, sigma = degrade(read_image(path), dcfg, index=index)
        _save_npy(out / f"{name}.npy", y)
        save_png(out / f"{name}.png", y)
        rows.append([name, index, _fmt(sigma)])
    _write_csv(out / "manifest.csv", ["image", "index", "sigma"], rows)
    print(f"degraded {len(rows)} images into {out}")


def _schedule(args, cfg) -> IpmSchedule:
    kw = {}
    for name in ("gamma0", "mu0", "mu_decay", "iterations", "x0_margin"):
        v = _opt(args, cfg, name)
        if v is not None:
            kw[name] = v
    return IpmSchedule(**kw)


def cmd_solve(args, cfg):
    kernel = _kernel(args, cfg)
    sched = _schedule(args, cfg)
    lam = float(_opt(args, cfg, "lam", cfg.get("lambda", DEFAULT_LAMBDA)))
    delta = float(_opt(args, cfg, "delta", DEFAULT_DELTA))
    _log_config("solve", dict(vars(sched), lam=lam, delta=delta))
    y = read_image(_existing(args.input))
    net = UnfoldedNetwork([], kernel, delta)
    p = DeblurProblem(net.operator(y.shape), y, delta)
    res = run_fb_ipm(p, lam, sched)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, res.image)
    trace_path = out.with_name(out.stem + "_trace.csv")
    write_trace_csv(trace_path, res.trace)
    if not args.no_figures:
        from .plotting import plot_solve_trace
        plot_solve_trace(res.trace, out.with_name(out.stem + "_trace.png"))
    msg = f"final objective {res.trace[-1][1]:.6g}, gamma {res.gamma:.4g}"
    if args.truth:
        truth = read_image(_existing(args.truth))
        msg += f", SSIM {ssim(res.image, truth, args.border_exclude):.4f}"
    print(msg)


def cmd_var_search(args, cfg):
    kernel = _kernel(args, cfg)
    sched = _schedule(args, cfg)
    grid = _parse_grid(_opt(args, cfg, "lambda_grid", DEFAULT_GRID))
    delta = float(_opt(args, cfg, "delta", DEFAULT_DELTA))
    border = int(_opt(args, cfg, "border_exclude", DEFAULT_BORDER))
    _log_config("var-search", dict(vars(sched), lambda_grid=grid, delta=delta,
                                   border_exclude=border))
    items = _list_images(args.input)
    truths = _match_truth(items, args.truth)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    net = UnfoldedNetwork([], kernel, delta)
    rows, summary = [], []
    for name, path in items:
        y = read_image(path)
        truth = read_image(truths[name])
        p = DeblurProblem(net.operator(y.shape), y, delta)
        res = var_grid_search(p, truth, grid, sched, args.workers, border)
        save_png(out / f"{name}.png", res.best_image)
        rows += [[name, _fmt(lam), _fmt(s)] for lam, s in res.scores]
        summary.append([name, _fmt(res.best_lambda), _fmt(res.best_ssim)])
        if not args.no_figures:
            from .plotting import plot_grid_search
            plot_grid_search(res.scores, out / f"{name}_grid.png")
    _write_csv(out / "var_report.csv", ["image", "lambda", "ssim"], rows)
    _write_csv(out / "var_best.csv", ["image", "best_lambda", "best_ssim"], summary)
    mean = np.mean([float(r[2]) for r in summary])
    print(f"VAR mean SSIM {mean:.4f} over {len(summary)} images")


def _train_config(args, cfg) -> TrainConfig:
    kw = {k: cfg[k] for k in _field_names(TrainConfig) if k in cfg}
    for flag, name in (("layers", "K"), ("epochs", "epochs_per_layer"),
                       ("lr", "learning_rate"), ("batch_size", "batch_size"),
                       ("seed", "seed"), ("workers", "workers")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from None


def _noise_policy(value):
    if value in (None, "estimate"):
        return "estimate"
    return float(value)


def cmd_train(args, cfg):
    tcfg = _train_config(args, cfg)
    kernel = _kernel(args, cfg)
    sigma = _parse_sigma(_opt(args, cfg, "sigma", 0.008))
    delta = float(_opt(args, cfg, "delta", DEFAULT_DELTA))
    policy = _noise_policy(_opt(args, cfg, "noise_policy", "estimate"))
    _log_config("train", dict(tcfg.to_dict(), sigma=sigma, delta=delta,
                              noise_policy=policy))
    if args.truth:
        truths = [read_image(p) for _, p in _list_images(args.truth)]
    else:
        count = int(_opt(args, cfg, "count", 20))
        size = int(_opt(args, cfg, "size", 48))
        truths = random_patches(TRAIN_SOURCES, count, size, tcfg.seed)
    dcfg = DegradationConfig(kernel=kernel, sigma=sigma, seed=tcfg.seed)
    dataset = [(t, degrade(t, dcfg, index=i)[0]) for i, t in enumerate(truths)]
    template = UnfoldedNetwork([], kernel, delta, sigma=policy)
    net, report = train_greedy(dataset, tcfg, template)
    model = Path(args.model)
    model.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, net)
    report.write_csv(model.with_name(model.stem + "_report.csv"))
    if not args.no_figures:
        from .plotting import plot_training
        plot_training(report.rows, model.with_name(model.stem + "_training.png"))
    finals = report.final_ssim_per_layer()
    if finals:
        print(f"trained {net.K} layers; mean train SSIM {finals[-1]:.4f}")
    else:
        print("trained 0 layers")


def _default_network(args, cfg, K):
    kernel = _kernel(args, cfg)
    delta = float(_opt(args, cfg, "delta", DEFAULT_DELTA))
    return UnfoldedNetwork([LayerParams.default() for _ in range(K)], kernel, delta)


def _network(args, cfg):
    K = _opt(args, cfg, "layers")
    if args.model:
        try:
            net = load_model(_existing(args.model))
        except (KeyError, TypeError) as exc:
            raise UsageError(f"{args.model}: malformed model file ({exc})") from None
        if K is not None:
            if K > net.K:
                raise UsageError(f"--layers {K} exceeds the model's {net.K} layers")
            net = net.truncated(K)
        return net
    return _default_network(args, cfg, 10 if K is None else int(K))


def _infer_one(job):
    net, name, y = job
    x, path = infer(net, y, return_path=True)
    return name, x, path, net.sigma_hat(y)


def cmd_infer(args, cfg):
    net = _network(args, cfg)
    border = int(_opt(args, cfg, "border_exclude", DEFAULT_BORDER))
    _log_config("infer", dict(K=net.K, border_exclude=border, model=args.model))
    items = _list_images(args.input)
    truths = _match_truth(items, args.truth) if args.truth else {}
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(net, name, read_image(path)) for name, path in items]
    results = _pool_map(_infer_one, jobs, args.workers)
    metric_rows, layer_rows, paths = [], [], []
    for name, x, path, sigma_hat in results:
        save_png(out / f"{name}.png", x)
        _save_npy(out / f"{name}.npy", x)
        s = p = None
        if name in truths:
            truth = read_image(truths[name])
            s, p = ssim(x, truth, border), psnr(x, truth, border)
        metric_rows.append([name, _fmt(s), _fmt(p), _fmt(sigma_hat)])
        layer_rows += [[name, k, _fmt(g), _fmt(m), _fmt(lam)]
                       for k, (g, m, lam) in enumerate(path)]
        paths.append(path)
    _write_csv(out / "metrics.csv", ["image", "ssim", "psnr", "sigma_hat"], metric_rows)
    _write_csv(out / "layers.csv", ["image", "layer", "gamma", "mu", "lambda"], layer_rows)
    if not args.no_figures and net.K > 0:
        from .plotting import plot_layer_parameters
        plot_layer_parameters(paths, out / "layers.png")
    msg = f"restored {len(results)} images into {out}"
    if truths:
        msg += f"; mean SSIM {np.mean([float(r[1]) for r in metric_rows]):.4f}"
    print(msg)


def cmd_certify(args, cfg):
    net = _network(args, cfg)
    reg = _opt(args, cfg, "reg", "gradient")
    tightest = bool(args.tightest or cfg.get("tightest", False))
    pairs = int(_opt(args, cfg, "check_pairs", 0))
    seed = int(_opt(args, cfg, "seed", 0))
    _log_config("certify", dict(K=net.K, reg=reg, tightest=tightest,
                                check_pairs=pairs, seed=seed))
    if net.K == 0:
        raise UsageError("certification needs at least one layer")
    y = read_image(_existing(args.input))
    layers = frozen_layers(net, y)
    shape = y.shape[-2:]
    if reg == "gradient":
        D = list(GradientOperators(shape))
    elif reg == "identity":
        D = identity(shape)
    else:
        raise UsageError(f"--reg must be 'gradient' or 'identity', got {reg!r}")
    problem = DeblurProblem(net.operator(y.shape), y, net.delta, net.box, Quadratic(D))
    cert = certify_problem(layers, problem, tightest=tightest)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    cert.write(out)
    print(f"condition {cert.condition}, alpha {cert.alpha}")
    if pairs > 0 and cert.alpha is not None:
        ok, worst = empirical_averagedness_check(layers, problem, cert.alpha, pairs, seed)
        print(f"empirical check on {pairs} pairs: {'pass' if ok else 'FAIL'} "
              f"(worst relative margin {worst:.3e})")
        if not ok:
            raise RuntimeError("certificate failed the empirical averagedness check")


def cmd_metrics(args, cfg):
    border = int(_opt(args, cfg, "border_exclude", DEFAULT_BORDER))
    items = _list_images(args.input)
    truths = _match_truth(items, args.truth)
    rows = []
    for name, path in items:
        x = read_image(path)
        truth = read_image(truths[name])
        rows.append([name, _fmt(ssim(x, truth, border)), _fmt(psnr(x, truth, border)),
                     _fmt(estimate_noise_std(x))])
    header = ["image", "ssim", "psnr", "sigma_hat"]
    if args.output:
        _write_csv(args.output, header, rows)
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(header)
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys match the "
                        "command's configuration fields")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    common.add_argument("--kernel", help="gaussian:<std>[:<size>], uniform:<size>, "
                        "identity or a kernel file")
    common.add_argument("--no-normalize", action="store_true",
                        help="do not rescale kernel files to unit sum")
    common.add_argument("--border-exclude", type=int, dest="border_exclude",
                        help=f"pixels ignored at each edge by metrics (default {DEFAULT_BORDER})")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ipunfold", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("patches", parents=[common], help="cut grayscale patches from bundled images")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("degrade", parents=[common], help="blur and add noise")
    p.add_argument("input", help="PNG/NPY file or directory of ground truths")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--sigma", help="noise std, or lo:hi for a uniform draw per image")

    def schedule_flags(p):
        p.add_argument("--gamma0", type=float)
        p.add_argument("--mu0", type=float)
        p.add_argument("--mu-decay", type=float, dest="mu_decay")
        p.add_argument("--iterations", type=int)
        p.add_argument("--x0-margin", type=float, dest="x0_margin")
        p.add_argument("--delta", type=float)

    p = sub.add_parser("solve", parents=[common], help="run the reference solver")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="restored PNG path")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--truth")
    schedule_flags(p)

    p = sub.add_parser("var-search", parents=[common], help="lambda grid baseline")
    p.add_argument("input")
    p.add_argument("--truth", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--lambda-grid", dest="lambda_grid")
    schedule_flags(p)

    p = sub.add_parser("train", parents=[common], help="greedy layer-wise training")
    p.add_argument("--truth", help="directory of ground truths "
                   "(default: built-in desk patches)")
    p.add_argument("--model", required=True, help="output model JSON")
    p.add_argument("--layers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--sigma")
    p.add_argument("--delta", type=float)
    p.add_argument("--noise-policy", dest="noise_policy",
                   help="'estimate' or a fixed noise level for lambda")
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("infer", parents=[common], help="restore with a model")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--model", help="model JSON (default: untrained network)")
    p.add_argument("--truth")
    p.add_argument("--layers", type=int)
    p.add_argument("--delta", type=float)

    p = sub.add_parser("certify", parents=[common], help="averagedness certificate")
    p.add_argument("input", help="observation that fixes the data-dependent lambdas")
    p.add_argument("-o", "--output", required=True, help="certificate JSON path")
    p.add_argument("--model")
    p.add_argument("--layers", type=int)
    p.add_argument("--reg", choices=("gradient", "identity"))
    p.add_argument("--tightest", action="store_true",
                   help="smallest alpha over all conditions")
    p.add_argument("--check-pairs", type=int, dest="check_pairs")
    p.add_argument("--delta", type=float)

    p = sub.add_parser("metrics", parents=[common], help="SSIM/PSNR table")
    p.add_argument("input")
    p.add_argument("--truth", required=True)
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    return parser


COMMANDS = {
    "patches": cmd_patches, "degrade": cmd_degrade, "solve": cmd_solve,
    "var-search": cmd_var_search, "train": cmd_train, "infer": cmd_infer,
    "certify": cmd_certify, "metrics": cmd_metrics,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config, args.command)
        if args.border_exclude is None and "border_exclude" in cfg:
            args.border_exclude = cfg["border_exclude"]
        if args.border_exclude is None:
            args.border_exclude = DEFAULT_BORDER
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # reported, not re-raised: the exit code carries it
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())
