"""Experiment driver: build problems from a config file, run solver
variants, and write machine-readable iteration traces.

Config files are INI-style.  A minimal example::

    [problem]
    type = convection_diffusion
    d = 4
    n = 34

    [solver]
    type = tt_sgmres
    maxit = 80
    tol = 1e-8
    ell = 1

    [output]
    csv = run.csv
    track_true_residual = false

Subcommands: ``ttk solve``, ``ttk compare`` (a [compare] section lists
variants), ``ttk sweep`` (a [sweep] section gives axis and values).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
import time

CSV_HEADER = [
    "iter",
    "res_sketched",
    "res_true",
    "max_rank",
    "t_matvec",
    "t_sketch",
    "t_orth",
    "t_round",
    "t_lsq",
]

SOLVER_NAMES = ("tt_gmres", "tt_sgmres_vanilla", "tt_sgmres", "tt_spgmres")


class ConfigError(Exception):
    pass


def _apply_thread_cap():
    cap = os.environ.get("TTK_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()

import numpy as np  # noqa: E402  (thread cap must precede the import)

from .precond import ExpSumPreconditioner, spectral_interval  # noqa: E402
from .problems import (  # noqa: E402
    ConvectionDiffusionSpec,
    MarkovSpec,
    cd_factor_matrices,
    convection_diffusion,
    markov_chain,
    markov_factor_matrices,
)
from .sketch import kr_sketch_new  # noqa: E402
from .solvers import (  # noqa: E402
    SolverConfig,
    make_solver_frame,
    tt_gmres,
    tt_sgmres,
    tt_sgmres_vanilla,
    tt_spgmres,
)
from .tt import RoundSpec  # noqa: E402


def _get(section, key, conv, default=None, required=False):
    raw = section[key].strip() if section is not None and key in section else ""
    if raw == "":
        if required:
            raise ConfigError(f"missing required key '{key}'")
        return default
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for key '{key}': {raw}") from exc


def _bool(raw):
    lower = raw.lower()
    if lower in ("1", "true", "yes", "on"):
        return True
    if lower in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def parse_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if "problem" not in cp:
        raise ConfigError("missing [problem] section")
    if "solver" not in cp:
        raise ConfigError("missing [solver] section")
    return cp


def build_problem(cp, seed_override=None):
    sec = cp["problem"]
    kind = _get(sec, "type", str, required=True)
    d = _get(sec, "d", int, required=True)
    n = _get(sec, "n", int, required=True)
    if kind == "convection_diffusion":
        spec = ConvectionDiffusionSpec(
            d=d,
            n=n,
            diffusion=_get(sec, "diffusion", float, 1e-2),
        )
        op, rhs = convection_diffusion(spec)
        factors = cd_factor_matrices(spec)
    elif kind == "markov_chain":
        seed = _get(sec, "seed", int, 0)
        if seed_override is not None:
            seed = seed_override
        spec = MarkovSpec(
            d=d,
            n=n,
            sync_rate=_get(sec, "sync_rate", float, 0.1),
            rate_low=_get(sec, "rate_low", float, 1.0),
            rate_high=_get(sec, "rate_high", float, 2.0),
            seed=seed,
        )
        op, rhs = markov_chain(spec)
        factors = markov_factor_matrices(spec)
    else:
        raise ConfigError(f"unknown problem type '{kind}'")
    return op, rhs, factors


def build_solver_config(cp, overrides):
    sec = cp["solver"]
    kwargs = dict(
        maxit=_get(sec, "maxit", int, 200),
        tol=_get(sec, "tol", float, 1e-6),
        ell=_get(sec, "ell", int, 1),
        eta=_get(sec, "eta", float, 0.3),
        max_rank=_get(sec, "max_rank", int),
        sketch_rows=_get(sec, "sketch_rows", int),
        oversampling=_get(sec, "oversampling", int, 20),
        solution_rank=_get(sec, "solution_rank", int),
        combine_mode=_get(sec, "combine_mode", str, "explicit"),
        seed=_get(sec, "seed", int, 0),
        force_iterations=_get(sec, "force_iterations", _bool, False),
    )
    if overrides.maxit is not None:
        kwargs["maxit"] = overrides.maxit
        kwargs["sketch_rows"] = None
    if overrides.tol is not None:
        kwargs["tol"] = overrides.tol
    if overrides.seed is not None:
        kwargs["seed"] = overrides.seed
    out = cp["output"] if "output" in cp else None
    track = _get(out, "track_true_residual", _bool, False)
    if overrides.track_true_residual:
        track = True
    kwargs["track_true_residual"] = track
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid solver configuration: {exc}") from exc


def build_preconditioner(cp, factors, cfg):
    if "preconditioner" not in cp:
        return None
    sec = cp["preconditioner"]
    kind = _get(sec, "type", str, "none")
    if kind in ("none", ""):
        return None
    if kind != "expsum":
        raise ConfigError(f"unknown preconditioner type '{kind}'")
    zeta = _get(sec, "zeta", int, required=True)
    cap = _get(sec, "max_rank", int, cfg.max_rank)
    accumulate = _get(sec, "accumulate", str, "sequential")
    spec = RoundSpec(cfg.eta * cfg.tol, cap)
    return ExpSumPreconditioner.from_kron_sum(
        factors, zeta, spec, accumulate=accumulate, stream_seed=cfg.seed + 7
    )


def run_variant(name, cp, overrides, problem=None):
    """Run one solver variant; returns (report, wall seconds)."""
    if name not in SOLVER_NAMES:
        raise ConfigError(f"unknown solver name '{name}'")
    cfg = build_solver_config(cp, overrides)
    op, rhs, factors = problem if problem is not None else build_problem(cp)
    t0 = time.perf_counter()
    if name == "tt_gmres":
        _, report = tt_gmres(op, rhs, None, cfg)
    else:
        sketch = kr_sketch_new(rhs.dims, cfg.sketch_rows, seed=cfg.seed)
        if name == "tt_sgmres_vanilla":
            _, report = tt_sgmres_vanilla(op, rhs, None, cfg, sketch)
        elif name == "tt_sgmres":
            frame = make_solver_frame(rhs, cfg, seed=cfg.seed + 1)
            _, report = tt_sgmres(op, rhs, None, cfg, sketch, frame)
        else:
            precond = build_preconditioner(cp, factors, cfg)
            if precond is None:
                raise ConfigError("tt_spgmres requires an expsum [preconditioner]")
            frame = make_solver_frame(rhs, cfg, seed=cfg.seed + 1)
            _, report = tt_spgmres(op, precond, rhs, None, cfg, sketch, frame)
    wall = time.perf_counter() - t0
    return report, wall


def write_trace(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(report.iterations):
            true_val = ""
            if report.res_true is not None:
                true_val = f"{report.res_true[i]:.17g}"
            writer.writerow(
                [
                    i + 1,
                    f"{report.res_sketched[i]:.17g}",
                    true_val,
                    report.basis_rank[i],
                    f"{report.times['matvec'][i]:.6g}",
                    f"{report.times['sketch'][i]:.6g}",
                    f"{report.times['orth'][i]:.6g}",
                    f"{report.times['round'][i]:.6g}",
                    f"{report.times['lsq'][i]:.6g}",
                ]
            )


def summary_line(name, report, wall):
    final_true = ""
    if report.res_true:
        final_true = f" res_true={report.res_true[-1]:.3e}"
    return (
        f"{name}: iterations={report.iterations} converged={report.converged} "
        f"res_sketched={report.res_sketched[-1]:.3e}{final_true} "
        f"peak_rank={report.peak_rank} wall={wall:.2f}s"
    )


def _out_path(overrides, cp, default_name):
    out_dir = overrides.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    configured = None
    if "output" in cp:
        configured = _get(cp["output"], "csv", str)
    name = configured if configured else default_name
    return os.path.join(out_dir, name)


def cmd_solve(args):
    cp = parse_config(args.config)
    solver = _get(cp["solver"], "type", str, required=True)
    report, wall = run_variant(solver, cp, args)
    path = _out_path(args, cp, "trace.csv")
    write_trace(path, report)
    print(summary_line(solver, report, wall))
    print(f"trace written to {path}")
    for w in report.warnings:
        print(f"warning: {w}")
    return 0 if report.converged else 2


def cmd_compare(args):
    cp = parse_config(args.config)
    if "compare" not in cp:
        raise ConfigError("missing [compare] section")
    variants = [v.strip() for v in _get(cp["compare"], "variants", str, required=True).split(",")]
    if not variants or any(not v for v in variants):
        raise ConfigError("empty variant list")
    problem = build_problem(cp)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    all_ok = True
    for name in variants:
        report, wall = run_variant(name, cp, args, problem=problem)
        write_trace(os.path.join(out_dir, f"{name}.csv"), report)
        print(summary_line(name, report, wall))
        rows.append(
            {
                "variant": name,
                "iterations": report.iterations,
                "time": f"{wall:.4f}",
                "peak_rank": report.peak_rank,
                "converged": report.converged,
            }
        )
        all_ok = all_ok and report.converged
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "iterations", "time", "peak_rank", "converged"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"summary written to {summary_path}")
    return 0 if all_ok else 2


def cmd_sweep(args):
    cp = parse_config(args.config)
    if "sweep" not in cp:
        raise ConfigError("missing [sweep] section")
    axis = _get(cp["sweep"], "axis", str, required=True)
    if axis not in ("d", "n", "max_rank"):
        raise ConfigError(f"sweep axis must be d, n or max_rank, got '{axis}'")
    raw_values = _get(cp["sweep"], "values", str, required=True)
    values = [v.strip() for v in raw_values.split(",") if v.strip()]
    if not values:
        raise ConfigError("empty sweep value list")
    variants = [_get(cp["solver"], "type", str, required=True)]
    if "compare" in cp:
        variants = [v.strip() for v in _get(cp["compare"], "variants", str, required=True).split(",")]
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for value in values:
        cp_point = configparser.ConfigParser()
        cp_point.read_dict({s: dict(cp[s]) for s in cp.sections()})
        if axis == "max_rank":
            cp_point["solver"]["max_rank"] = "" if value in ("none", "inf") else value
        else:
            cp_point["problem"][axis] = value
        problem = build_problem(cp_point)
        for name in variants:
            report, wall = run_variant(name, cp_point, args, problem=problem)
            final_true = report.res_true[-1] if report.res_true else ""
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "variant": name,
                    "time": f"{wall:.4f}",
                    "iterations": report.iterations,
                    "peak_rank": report.peak_rank,
                    "res_sketched": f"{report.res_sketched[-1]:.6e}",
                    "res_true": f"{final_true:.6e}" if final_true != "" else "",
                    "converged": report.converged,
                }
            )
            print(f"{axis}={value} {summary_line(name, report, wall)}")
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=[
                "axis", "value", "variant", "time", "iterations",
                "peak_rank", "res_sketched", "res_true", "converged",
            ],
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep written to {path}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ttk", description="tensor-train sketched GMRES experiment driver"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("compare", cmd_compare), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--track-true-residual", action="store_true")
        p.add_argument("--maxit", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
