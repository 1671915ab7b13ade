"""Command-line harness: ``photocount <command> [--config FILE] [--out DIR]``.

Commands write CSV series/tables plus a ``summary.json`` into ``--out``.
Every number depends only on the config (and ``--seed``): CSV files are
byte-identical across runs, and ``summary.json`` differs only in the
``provenance.wall_time_s`` entry.

Exit codes: 0 success, 2 config validation error, 3 numerical tolerance
failure, 4 statistical acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import ConfigError, SimConfig, load_config
from .evolution import (
    IntegrationError,
    conditional_rate,
    e_mean_from_vacuum,
    evolve,
    g2_immediate,
    sd_mean_closed_form,
)
from .fockspace import TruncationError, make_coherent, make_fock, make_thermal, mean_photon
from .jump_models import ModelKind, one_count_rate, post_one_count, table1_oracle, table2_oracle
from .microderivation import CouplingParams, convergence_order, verify_superoperators
from .trajectories import (
    consistency_fraction,
    ensemble,
    expected_trajectories,
    mc_g2,
    waiting_time_ks,
)

log = logging.getLogger("photocount")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STATS = 0, 2, 3, 4

SD_DECAY_TOL = 1e-6
E_IDENTITY_TOL = 1e-5
LAMBDA_TOL = 1e-5
CONSISTENCY_FRACTION = 0.95


@dataclass
class ResultBundle:
    command: str
    config: dict
    summary: dict
    tables: dict[str, tuple[list[str], list[list[Any]]]] = field(default_factory=dict)
    exit_code: int = EXIT_OK
    wall_time_s: float | None = None

    def provenance(self) -> dict:
        return {
            "package": "photocount",
            "version": __version__,
            "seed": self.config["seed"],
            "wall_time_s": self.wall_time_s,
        }


# ------------------------------------------------------------------ output


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def write_bundle(bundle: ResultBundle, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, rows) in bundle.tables.items():
        p = out_dir / f"{name}.csv"
        p.write_text(csv_text(header, rows), newline="")
        written.append(p)
    doc = {
        "command": bundle.command,
        "exit_code": bundle.exit_code,
        "provenance": bundle.provenance(),
        "config": bundle.config,
        "summary": bundle.summary,
    }
    p = out_dir / "summary.json"
    p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def _dev(num: float, ref: float) -> float:
    """Relative deviation, or absolute when the reference is zero."""
    d = abs(num - ref)
    return d / abs(ref) if ref != 0.0 else d


# ---------------------------------------------------------------- commands


TABLE_QUANTITIES = ("mean_after", "vacuum_after", "rate", "conditional_rate", "g2")


def cmd_tables(cfg: SimConfig) -> ResultBundle:
    """Post-count statistics by matrix algebra next to their closed forms."""
    sec = cfg.tables
    cases = []
    try:
        for f in sec.fields:
            if f == "fock":
                cases += [(f, float(m), make_fock(m, sec.dim)) for m in sec.fock_m]
            elif f == "thermal":
                cases += [(f, n, make_thermal(n, sec.dim, cfg.tail_tol)) for n in sec.nbar]
            else:
                cases += [(f, n, make_coherent(math.sqrt(n), sec.dim, cfg.tail_tol)) for n in sec.nbar]
    except TruncationError as exc:
        raise ConfigError(f"config.tables: {exc}") from exc

    header = ["model", "field", "nbar", "mean_ratio"]
    for q in TABLE_QUANTITIES:
        header += [q, f"{q}_oracle", f"{q}_abs_diff", f"{q}_rel_diff"]
    rows = []
    worst = 0.0
    for kind in sec.models:
        model = cfg.jump_model(kind)
        for fname, nbar, rho in cases:
            post = post_one_count(model, rho)
            rate = one_count_rate(model, rho)
            cond = one_count_rate(model, post)
            num = {
                "mean_after": mean_photon(post),
                "vacuum_after": float(post.data[0, 0].real),
                "rate": rate,
                "conditional_rate": cond,
                "g2": cond / rate,
            }
            ora = {**table1_oracle(model, fname, nbar), **table2_oracle(model, fname, nbar)}
            row = [kind, fname, nbar, num["mean_after"] / nbar]
            for q in TABLE_QUANTITIES:
                d = _dev(num[q], ora[q])
                worst = max(worst, d)
                row += [num[q], ora[q], abs(num[q] - ora[q]), d]
            rows.append(row)

    ok = worst <= sec.tolerance
    summary = {
        "rows": len(rows),
        "max_deviation": worst,
        "tolerance": sec.tolerance,
        "passed": ok,
    }
    return ResultBundle(
        "tables", cfg.to_dict(), summary, {"tables": (header, rows)}, EXIT_OK if ok else EXIT_NUMERIC
    )


def cmd_evolve(cfg: SimConfig) -> ResultBundle:
    """Averaged evolution with the model's mean-photon identity alongside."""
    model = cfg.jump_model()
    rho0 = cfg.initial_state()
    grid = cfg.time_grid()
    try:
        res = evolve(model, rho0, grid, method=cfg.method)
    except IntegrationError as exc:
        summary = {"passed": False, "error": str(exc)}
        return ResultBundle("evolve", cfg.to_dict(), summary, {}, EXIT_NUMERIC)

    gt = model.gamma * res.times
    nbar0 = res.mean_photon[0]
    header = ["gamma_t"]
    cols: list[np.ndarray] = [gt]
    if "mean_photon" in cfg.outputs:
        header.append("mean_photon")
        cols.append(res.mean_photon)
    if "p0" in cfg.outputs:
        header.append("p0")
        cols.append(res.vacuum_prob)
    if "trace_residual" in cfg.outputs:
        header.append("trace_residual")
        cols.append(res.trace_residual)
    if "populations" in cfg.outputs:
        pops = res.populations
        header += [f"p{n}" for n in range(rho0.dim)]
        cols += list(pops.T)

    if model.kind is ModelKind.SD:
        ref = sd_mean_closed_form(nbar0, model.gamma, res.times - res.times[0])
        check_name, tol = "closed_form_max_rel_dev", SD_DECAY_TOL
        header += ["mean_photon_closed_form", "rel_dev"]
    else:
        ref = e_mean_from_vacuum(nbar0, model.gamma, res.times, res.vacuum_prob)
        check_name, tol = "integral_identity_max_rel_dev", E_IDENTITY_TOL
        header += ["mean_photon_integral_identity", "rel_dev"]
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(
            res.mean_photon > 0, np.abs(res.mean_photon - ref) / res.mean_photon, np.abs(ref)
        )
    cols += [ref, dev]

    rows = [list(r) for r in zip(*cols)]
    worst = float(np.max(dev))
    max_trace = float(np.max(np.abs(res.trace_residual)))
    ok = worst <= tol and max_trace <= 1e-9
    summary = {
        check_name: worst,
        "tolerance": tol,
        "max_trace_residual": max_trace,
        "solver_steps": res.n_steps,
        "rejected_steps": res.n_rejected,
        "passed": ok,
    }
    return ResultBundle(
        "evolve", cfg.to_dict(), summary, {"evolution": (header, rows)}, EXIT_OK if ok else EXIT_NUMERIC
    )


def cmd_trajectories(cfg: SimConfig) -> ResultBundle:
    """Ensemble statistics, checked against the averaged evolution."""
    model = cfg.jump_model()
    rho0 = cfg.initial_state()
    grid = cfg.time_grid()
    stats = ensemble(model, rho0, grid, cfg.n_traj, cfg.seed, workers=cfg.workers)
    # the reference is exact for diagonal inputs; rk4 otherwise
    ref = evolve(model, rho0, grid, method="auto")

    header = ["gamma_t", "mean_photon", "mean_photon_se", "reference_mean", "p0", "p0_se"]
    cols = [
        model.gamma * stats.times,
        stats.mean_photon,
        stats.mean_photon_se,
        ref.mean_photon,
        stats.p_n[:, 0],
        stats.p_n_se[:, 0],
    ]
    if "populations" in cfg.outputs:
        header += [f"p{n}" for n in range(rho0.dim)]
        cols += list(stats.p_n.T)
    rows = [list(r) for r in zip(*cols)]
    hist_rows = [[k, v] for k, v in stats.count_histogram.items()]

    frac = consistency_fraction(stats, ref.mean_photon)
    consistent = frac >= CONSISTENCY_FRACTION
    summary: dict[str, Any] = {
        "n_traj": stats.n_traj,
        "consistency_fraction": frac,
        "unraveling_consistent": consistent,
        "count_histogram": stats.count_histogram,
    }
    ok = consistent
    if np.isfinite(stats.first_jump_times).any():
        ks = waiting_time_ks(model, rho0, stats.first_jump_times, grid.t1 - grid.t0)
        summary["waiting_time_ks"] = ks
        ok = ok and ks["passed"]
    summary["passed"] = ok
    tables = {
        "ensemble": (header, rows),
        "count_histogram": (["counts", "frequency"], hist_rows),
    }
    return ResultBundle("trajectories", cfg.to_dict(), summary, tables, EXIT_OK if ok else EXIT_STATS)


def cmd_g2(cfg: SimConfig) -> ResultBundle:
    """Zero-delay g2 from conditional rates, optionally with a Monte Carlo estimate."""
    model = cfg.jump_model()
    rho0 = cfg.initial_state()
    if not one_count_rate(model, rho0) > 0.0:
        raise ConfigError("config.field: the initial state has zero count rate, so g2 is undefined")
    analytic = g2_immediate(model, rho0)
    summary: dict[str, Any] = {
        "g2_analytic": analytic,
        "rate": one_count_rate(model, rho0),
        "conditional_rate": conditional_rate(model, rho0),
    }
    sec = cfg.g2
    n_traj = sec.n_traj
    if n_traj == "auto":
        try:
            n_traj = expected_trajectories(model, rho0, sec.window, sec.target_coincidences, sec.duration)
        except ValueError:
            n_traj = 0
            summary["note"] = "no coincidences expected (zero conditional rate); Monte Carlo skipped"
    header = ["g2_analytic", "g2_mc", "g2_mc_se", "n_pairs", "n_singles", "n_traj", "window_gamma"]
    ok = True
    if n_traj > 0:
        est = mc_g2(model, rho0, sec.window, n_traj, cfg.seed, duration=sec.duration, workers=cfg.workers)
        within = abs(est.g2 - analytic) <= 3.0 * est.se
        ok = bool(within and not est.low_coincidences)
        summary.update(
            g2_mc=est.g2,
            g2_mc_se=est.se,
            n_pairs=est.n_pairs,
            n_singles=est.n_singles,
            n_traj=est.n_traj,
            low_coincidences=est.low_coincidences,
            within_3_sigma=within,
        )
        row = [analytic, est.g2, est.se, est.n_pairs, est.n_singles, est.n_traj, model.gamma * sec.window]
    else:
        row = [analytic, None, None, None, None, 0, model.gamma * sec.window]
    summary["passed"] = ok
    return ResultBundle("g2", cfg.to_dict(), summary, {"g2": (header, [row])}, EXIT_OK if ok else EXIT_STATS)


def cmd_derive_check(cfg: SimConfig) -> ResultBundle:
    """Detector-field micro-step against the SD superoperators at dt, dt/2, dt/4, ..."""
    sec = cfg.derive
    rho_f = cfg.initial_state()
    dts = [sec.dt / 2**k for k in range(sec.halvings + 1)]
    header = [
        "omega_dt",
        "one_count_residual",
        "no_count_residual",
        "taylor_one_count_residual",
        "taylor_no_count_residual",
        "excited_rate",
        "lambda_nbar",
        "lambda_rel_dev",
    ]
    rows = []
    ones, nos, lam_devs = [], [], []
    for dt in dts:
        params = CouplingParams(sec.omega, dt)
        ex = verify_superoperators(rho_f, params, propagator="exact")
        ty = verify_superoperators(rho_f, params, propagator="taylor")
        lam_dev = _dev(ty["excited_rate"], ty["lambda_nbar"])
        ones.append(ex["one_count_residual"])
        nos.append(ex["no_count_residual"])
        lam_devs.append(lam_dev)
        rows.append(
            [
                sec.omega * dt,
                ex["one_count_residual"],
                ex["no_count_residual"],
                ty["one_count_residual"],
                ty["no_count_residual"],
                ty["excited_rate"],
                ty["lambda_nbar"],
                lam_dev,
            ]
        )

    def order(res):
        if min(res) <= 0.0:
            return None
        return convergence_order(dts, res)

    o1, o2 = order(ones), order(nos)
    orders_ok = all(o is None or o >= sec.min_order for o in (o1, o2))
    if o1 is None or o2 is None:
        # residuals identically zero (e.g. vacuum): nothing to converge
        orders_ok = orders_ok and max(ones + nos) == 0.0
    lam_ok = max(lam_devs) <= LAMBDA_TOL
    ok = orders_ok and lam_ok
    summary = {
        "one_count_order": o1,
        "no_count_order": o2,
        "min_order": sec.min_order,
        "lambda_identification_max_rel_dev": max(lam_devs),
        "lambda_tolerance": LAMBDA_TOL,
        "passed": ok,
    }
    return ResultBundle(
        "derive-check", cfg.to_dict(), summary, {"derive_check": (header, rows)}, EXIT_OK if ok else EXIT_NUMERIC
    )


COMMANDS: dict[str, Callable[[SimConfig], ResultBundle]] = {
    "tables": cmd_tables,
    "evolve": cmd_evolve,
    "trajectories": cmd_trajectories,
    "g2": cmd_g2,
    "derive-check": cmd_derive_check,
}


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photocount", description="Cavity photon-counting simulator (SD and E jump models)."
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    parser.add_argument("--quiet", action="store_true", help="do not print the summary")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        bundle = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    bundle.wall_time_s = time.perf_counter() - start
    write_bundle(bundle, args.out)
    log.info("%s finished in %.2f s -> %s", args.command, bundle.wall_time_s, args.out)
    if not args.quiet:
        print(json.dumps(_jsonable(bundle.summary), indent=2, sort_keys=True))
    return bundle.exit_code


if __name__ == "__main__":
    sys.exit(main())
