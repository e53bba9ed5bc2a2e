"""Command-line interface: ``ifest estimate|bench|qq|affinity|gen``.

Exit codes: 0 success, 2 bad input (files, flags, parameters), 3 sample
size or dimension problems, 4 degenerate case when an interval was asked
for.  ``IFEST_THREADS`` caps the number of worker processes used by
``bench`` and ``qq`` (0 or unset means one per CPU); output is identical
for any worker count.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
import multiprocessing as mp

import numpy as np

from . import estimators as E
from . import functionals as F
from . import synthdata
from .errors import DegenerateCase, IfestError, IndexOutOfRange, InputError, ShapeError

BENCH_HEADER = "functional,method,n,m,trial,estimate,truth,abs_error,seconds"
QQ_HEADER = "trial,estimate,truth,std_error,standardized,normal_quantile,sorted_standardized"


def fmt(x):
    """Shortest repr that round-trips a float exactly."""
    if x is None:
        return ""
    return repr(float(x))


def fmt_bandwidth(h):
    """A scalar bandwidth, or per-axis values joined by ``/``."""
    if isinstance(h, tuple):
        return "/".join(fmt(v) for v in h)
    return fmt(h)


# ---------------------------------------------------------------------------
# sample files


def read_samples(path, rescale=False):
    """Read a numeric CSV (optional header row) into an (n, d) array."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise InputError(f"{path} holds no samples")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError(f"{path} has rows of different lengths")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value ({exc})") from exc
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path} contains non-finite values")
    if rescale:
        data = rescale_columns(data)
    return data


def rescale_columns(data):
    """Per-column min-max map onto [0.01, 0.99]; constant columns go to 0.5."""
    lo = data.min(axis=0)
    span = data.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out = 0.01 + 0.98 * (data - lo) / safe
    return np.where(span > 0, out, 0.5)


def write_samples(data, fh):
    for row in np.atleast_2d(data):
        fh.write(",".join(fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# shared flag handling


def _add_functional_flags(p, required=True):
    p.add_argument("--functional", required=required, help="functional kind or alias, e.g. kl, shannon_entropy")
    p.add_argument("--alpha", type=float, help="order of Tsallis/Renyi kinds, or exponent a of power_integral")
    p.add_argument("--beta", type=float, help="exponent b of power_integral")
    p.add_argument("--zdim", type=int, default=0, help="width of the trailing conditioning block")
    p.add_argument("--xdim", type=int, help="width of the X block for mutual-information kinds")
    p.add_argument("--phi", choices=sorted(F.PHI_LIBRARY), help="generator of an f_divergence")


def _add_config_flags(p):
    p.add_argument("--bandwidth", default="auto", help="auto (shared CV bandwidth), auto-diag (per-axis CV), or h, or h1,h2,... per density")
    p.add_argument("--kernel-order", type=int, default=2)
    p.add_argument("--clamp", default=None, help="B',B truncation bounds (B may be inf)")
    p.add_argument("--boundary", choices=("mirror", "none"), default="mirror")
    p.add_argument("--grid", type=int, default=None, help="quadrature nodes per axis")
    p.add_argument("--seed", type=int, default=0)


def spec_from_args(args, kind=None):
    kind = kind or args.functional
    phi = phi_prime = None
    if getattr(args, "phi", None):
        phi, phi_prime = F.PHI_LIBRARY[args.phi]
    elif F.ALIASES.get(kind, kind) == F.FDIV:
        raise InputError("f_divergence needs --phi")
    return F.FunctionalSpec(
        kind,
        alpha=args.alpha,
        beta_exponent=args.beta,
        phi=phi,
        phi_prime=phi_prime,
        z_dim=args.zdim,
        x_dim=args.xdim,
    )


def _floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad {what}: {text!r}") from exc


def config_from_args(args, seed=None):
    choice = args.bandwidth.replace("-", "_")
    bw = choice if choice in E.AUTO_BANDWIDTHS else tuple(_floats(args.bandwidth, "--bandwidth"))
    clamps = (0.0, math.inf)
    if args.clamp:
        vals = _floats(args.clamp, "--clamp")
        if len(vals) != 2:
            raise InputError("--clamp takes two values B',B")
        clamps = tuple(vals)
        if clamps[0] < 0 or not clamps[1] > clamps[0]:
            raise InputError("--clamp needs 0 <= B' < B")
    return E.EstimatorConfig(
        bandwidth=bw,
        kernel_order=args.kernel_order,
        clamps=clamps,
        boundary=args.boundary,
        grid_points=args.grid,
        seed=args.seed if seed is None else seed,
    )


def _config_echo(cfg):
    return {
        "bandwidth": cfg.bandwidth if isinstance(cfg.bandwidth, str) else list(np.atleast_1d(cfg.bandwidth)),
        "kernel_order": cfg.kernel_order,
        "clamps": [cfg.clamps[0], cfg.clamps[1] if math.isfinite(cfg.clamps[1]) else "inf"],
        "boundary": cfg.boundary,
        "grid_points": cfg.grid_points,
        "folds": cfg.folds,
        "seed": cfg.seed,
    }


def worker_count():
    raw = os.environ.get("IFEST_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError as exc:
        raise InputError(f"IFEST_THREADS must be an integer, got {raw!r}") from exc
    if k < 0:
        raise InputError("IFEST_THREADS must be nonnegative")
    return k if k > 0 else (os.cpu_count() or 1)


def _single_threaded(fn, *args):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        return fn(*args)


def run_tasks(fn, tasks):
    """Map ``fn`` over ``tasks`` in worker processes; results keep task order."""
    workers = min(worker_count(), max(1, len(tasks)))
    if workers == 1:
        return [_single_threaded(fn, t) for t in tasks]
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_single_threaded, [fn] * len(tasks), tasks))


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(args, out):
    spec = spec_from_args(args)
    cfg = config_from_args(args)
    X = read_samples(args.x, args.rescale)
    Y = read_samples(args.y, args.rescale) if args.y else None
    est = E.estimate(spec, X, Y, cfg, args.method)
    avar = None
    if args.variance == "closed_form":
        if spec.kind not in (F.COND_TSALLIS, F.TSALLIS_D):
            raise InputError("--variance closed_form applies to tsallis_div and cond_tsallis only")
        avar = E.estimate_cond_tsallis_variance(X, Y, spec.alpha, cfg)
    ci = None
    if args.ci is not None:
        if not 0.0 < args.ci < 1.0:
            raise InputError("--ci must lie in (0, 1)")
        if avar is not None:
            if avar > E.DEGENERATE_TOL:
                ci = est.ci(args.ci, avar)
        elif not est.degenerate_flag:
            ci = est.ci(args.ci)
    record = est.as_dict()
    record["variance_source"] = args.variance
    if avar is not None:
        record["asymptotic_variance"] = avar
    record["ci_level"] = args.ci
    record["ci"] = None if ci is None else list(ci)
    record["config"] = _config_echo(cfg)
    if args.json:
        out.write(json.dumps(record, sort_keys=True) + "\n")
    else:
        out.write(f"functional: {record['functional']}\n")
        out.write(f"method: {est.method}\n")
        out.write(f"value: {fmt(est.value)}\n")
        out.write(f"variance_f: {fmt(est.variance_f)}\n")
        if est.variance_g is not None:
            out.write(f"variance_g: {fmt(est.variance_g)}\n")
        out.write(f"n_used: {est.n_used}\n")
        if est.m_used is not None:
            out.write(f"m_used: {est.m_used}\n")
        out.write(f"bandwidths: {', '.join(fmt_bandwidth(h) for h in est.bandwidths)}\n")
        if avar is not None:
            out.write(f"asymptotic_variance: {fmt(avar)} (closed form)\n")
        if args.ci is not None:
            if ci is None:
                out.write("ci: DEGENERATE\n")
            else:
                note = " (conjectural)" if est.conjectural else ""
                out.write(f"ci{args.ci:g}: {fmt(ci[0])} {fmt(ci[1])}{note}\n")
        out.write("config: " + " ".join(f"{k}={v}" for k, v in record["config"].items()) + "\n")
    if args.ci is not None and ci is None:
        raise DegenerateCase("the variance estimate vanishes; no interval is available")
    return 0


# ---------------------------------------------------------------------------
# bench and qq


def _trial_data(spec, dist, dist2, n, seed, trial):
    X = synthdata.sample(dist, n, synthdata.trial_seed(seed, n, trial, 1))
    Y = None
    if spec.arity == 2:
        Y = synthdata.sample(dist2, n, synthdata.trial_seed(seed, n, trial, 2))
    return X, Y


def _truth(spec, dist, dist2):
    dens = (synthdata.parse_dist(dist), synthdata.parse_dist(dist2)) if spec.arity == 2 else synthdata.parse_dist(dist)
    return synthdata.oracle_truth(spec, dens)


def _bench_task(task):
    spec, cfg_fields, dist, dist2, method, n, trial, seed, truth, timing = task
    X, Y = _trial_data(spec, dist, dist2, n, seed, trial)
    cfg = E.EstimatorConfig(**dict(cfg_fields, seed=synthdata.trial_seed(seed, n, trial, 3)))
    t0 = time.perf_counter()
    est = E.estimate(spec, X, Y, cfg, method)
    secs = time.perf_counter() - t0 if timing else 0.0
    m = n if spec.arity == 2 else 0
    return (spec.kind, method, n, m, trial, est.value, truth, abs(est.value - truth), secs)


def _cfg_fields(cfg):
    return {
        "bandwidth": cfg.bandwidth,
        "kernel_order": cfg.kernel_order,
        "clamps": cfg.clamps,
        "boundary": cfg.boundary,
        "grid_points": cfg.grid_points,
    }


def _parse_ints(text, what):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad {what}: {text!r}") from exc
    if not vals or any(v < 1 for v in vals):
        raise InputError(f"{what} needs positive integers")
    return vals


def _check_dists(spec, args):
    first = synthdata.parse_dist(args.dist)
    if spec.arity == 2:
        if not args.dist2:
            raise ShapeError(f"{spec.kind} needs --dist2")
        if synthdata.parse_dist(args.dist2).dim != first.dim:
            raise ShapeError("--dist and --dist2 have different dimensions")
    spec.check_dim(first.dim)


def bench_rows(spec, cfg, dist, dist2, n_list, trials, methods, seed, timing=False):
    """All bench rows, sorted by (method position, n, trial)."""
    truth = _truth(spec, dist, dist2)
    fields = _cfg_fields(cfg)
    tasks = [
        (spec, fields, dist, dist2, meth, n, t, seed, truth, timing)
        for meth in methods
        for n in sorted(n_list)
        for t in range(trials)
    ]
    return run_tasks(_bench_task, tasks)


def format_bench(rows):
    lines = [BENCH_HEADER]
    for kind, meth, n, m, t, est, truth, err, secs in rows:
        lines.append(f"{kind},{meth},{n},{m},{t},{fmt(est)},{fmt(truth)},{fmt(err)},{fmt(secs)}")
    return "\n".join(lines) + "\n"


def cmd_bench(args, out):
    spec = spec_from_args(args)
    cfg = config_from_args(args)
    if args.trials < 1:
        raise InputError("--trials must be at least 1")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods or any(m not in E.METHODS for m in methods):
        raise InputError(f"--methods takes a list drawn from {E.METHODS}")
    n_list = _parse_ints(args.n_list, "--n-list")
    _check_dists(spec, args)
    rows = bench_rows(spec, cfg, args.dist, args.dist2, n_list, args.trials, methods, args.seed, args.timing)
    _emit(format_bench(rows), args.out, out)
    return 0


def _qq_task(task):
    spec, cfg_fields, dist, dist2, method, n, trial, seed = task
    X, Y = _trial_data(spec, dist, dist2, n, seed, trial)
    cfg = E.EstimatorConfig(**dict(cfg_fields, seed=synthdata.trial_seed(seed, n, trial, 3)))
    est = E.estimate(spec, X, Y, cfg, method)
    return est.value, est.standard_error, est.degenerate_flag


def qq_rows(spec, cfg, dist, dist2, n, trials, method, seed):
    """Per-trial (estimate, truth, std_error, standardized) plus plotting quantiles.

    Raises :class:`DegenerateCase` when the influence functions vanish at
    the generating densities or any trial has vanishing variances.
    """
    truth = _truth(spec, dist, dist2)
    dens = (dist, dist2) if spec.arity == 2 else dist
    pop = [v for v in synthdata.population_variances(spec, dens) if v is not None]
    if all(v < E.DEGENERATE_TOL for v in pop):
        raise DegenerateCase("influence functions vanish at these densities; estimates are not asymptotically normal")
    fields = _cfg_fields(cfg)
    res = run_tasks(_qq_task, [(spec, fields, dist, dist2, method, n, t, seed) for t in range(trials)])
    if any(r[2] for r in res):
        raise DegenerateCase("a trial has vanishing influence variances; standardisation is undefined")
    z = [(v - truth) / se for v, se, _ in res]
    zs = sorted(z)
    rows = []
    for t, ((v, se, _), zt) in enumerate(zip(res, z)):
        q = E.normal_quantile((t + 0.5) / trials)
        rows.append((t, v, truth, se, zt, q, zs[t]))
    return rows


def cmd_qq(args, out):
    spec = spec_from_args(args)
    cfg = config_from_args(args)
    if args.trials < 1:
        raise InputError("--trials must be at least 1")
    if args.n < 4:
        raise ShapeError("--n must be at least 4")
    _check_dists(spec, args)
    rows = qq_rows(spec, cfg, args.dist, args.dist2, args.n, args.trials, args.method, args.seed)
    lines = [QQ_HEADER] + [",".join([str(r[0])] + [fmt(v) for v in r[1:]]) for r in rows]
    _emit("\n".join(lines) + "\n", args.out, out)
    return 0


# ---------------------------------------------------------------------------
# affinity and gen


def affinity_matrix(samples, spec, cfg, method="loo", scale=1.0):
    """Symmetric affinity ``exp(-scale * max(D_sym, 0)**2)`` between sample sets."""
    k = len(samples)
    A = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            dij = E.estimate(spec, samples[i], samples[j], cfg, method).value
            dji = E.estimate(spec, samples[j], samples[i], cfg, method).value
            d = max(0.5 * (dij + dji), 0.0)
            A[i, j] = A[j, i] = math.exp(-scale * d * d)
    return A


def cmd_affinity(args, out):
    spec = spec_from_args(args, kind=args.divergence)
    cfg = config_from_args(args)
    paths = [p for p in args.inputs.split(",") if p.strip()]
    if len(paths) < 1:
        raise InputError("--inputs needs at least one file")
    if not args.scale > 0:
        raise InputError("--scale must be positive")
    samples = [read_samples(p, args.rescale) for p in paths]
    A = affinity_matrix(samples, spec, cfg, args.method, args.scale)
    buf = io.StringIO()
    write_samples(A, buf)
    _emit(buf.getvalue(), args.out, out)
    return 0


def cmd_gen(args, out):
    if args.n < 1:
        raise InputError("--n must be at least 1")
    data = synthdata.sample(args.dist, args.n, args.seed)
    buf = io.StringIO()
    write_samples(data, buf)
    _emit(buf.getvalue(), args.out, out)
    return 0


def _emit(text, path, out):
    if path:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise InputError(f"cannot write {path}: {exc}") from exc
    else:
        out.write(text)


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="ifest", description="Influence-function estimators of information functionals.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a functional from sample files")
    _add_functional_flags(p)
    _add_config_flags(p)
    p.add_argument("--x", required=True, help="CSV file of samples")
    p.add_argument("--y", help="CSV file of the second sample (two-sample kinds)")
    p.add_argument("--method", choices=E.METHODS, default="loo")
    p.add_argument("--ci", type=float, help="confidence level, e.g. 0.95")
    p.add_argument("--json", action="store_true", help="print one JSON object instead of text")
    p.add_argument("--rescale", action="store_true", help="min-max each column onto [0.01, 0.99]")
    p.add_argument(
        "--variance",
        choices=("generic", "closed_form"),
        default="generic",
        help="interval variance: influence sample variances, or the S(a, b) formula (Tsallis divergences)",
    )
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="error-versus-n benchmark on synthetic densities")
    _add_functional_flags(p)
    _add_config_flags(p)
    p.add_argument("--dist", required=True, help="e.g. f1, f2, uniform, f2xuniform, f2^2")
    p.add_argument("--dist2", help="second density for two-sample kinds")
    p.add_argument("--n-list", default="100,400,1600")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--methods", default="ds,loo")
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte-identical output)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("qq", help="standardised estimates for normality checks")
    _add_functional_flags(p)
    _add_config_flags(p)
    p.add_argument("--dist", required=True)
    p.add_argument("--dist2")
    p.add_argument("--n", type=int, required=True, help="points per sample and trial")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--method", choices=("ds", "loo"), default="ds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_qq)

    p = sub.add_parser("affinity", help="pairwise affinity matrix between sample files")
    p.add_argument("--inputs", required=True, help="comma-separated CSV files")
    p.add_argument("--divergence", choices=("hellinger", "tsallis_div", "renyi_div"), default="hellinger")
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", choices=("loo", "ds"), default="loo")
    p.add_argument("--scale", type=float, default=1.0, help="gamma in exp(-gamma * D**2)")
    p.add_argument("--rescale", action="store_true")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_affinity, beta=None, zdim=0, xdim=None, phi=None)

    p = sub.add_parser("gen", help="write synthetic samples as CSV")
    p.add_argument("--dist", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out)
    except DegenerateCase as exc:
        print(f"ifest: degenerate: {exc}", file=sys.stderr)
        return 4
    except ShapeError as exc:
        print(f"ifest: {exc}", file=sys.stderr)
        return 3
    except (InputError, IndexOutOfRange) as exc:
        print(f"ifest: {exc}", file=sys.stderr)
        return 2
    except IfestError as exc:
        print(f"ifest: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
