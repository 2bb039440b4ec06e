"""Experiment driver: offline training, online adaptive solves, validation runs.

Every command writes a run manifest (config fingerprint, seed, version,
timestamps, output inventory with content hashes).  All randomness flows
from ``--seed``; data payloads (CSV/JSON/basis containers) are byte-stable
across re-runs with identical inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import DEFAULT_PENALTY, BlockVector
from .enrichment import adaptive_solve
from .estimator import Estimator, assemble_residual, brute_force_cpu, coercivity_lb
from .fom import Discretization, solve_fom
from .io import (load_basis, problem_fingerprint, save_basis, write_csv_matrix,
                 write_json, write_jsonl)
from .problem import ConfigError, load_problem
from .rom import ReducedModel
from .training import build_initial_rb

__all__ = ["main", "cmd_offline", "cmd_online", "cmd_validate"]

DENSE_CAP = 2000


def _load(args):
    if args.config:
        return load_problem(args.config)
    if args.preset:
        return load_problem(args.preset)
    raise ConfigError("either --config or --preset is required")


def _parse_mu(problem, spec: str) -> np.ndarray:
    """Parse "k=v,k=v" component overrides on top of the training parameter."""
    mu = np.array(problem.mu_train, dtype=float)
    if spec:
        for part in spec.split(","):
            k, _, v = part.partition("=")
            if not _:
                raise ConfigError(f"bad --mu entry {part!r}, expected k=v")
            idx = int(k)
            if not 0 <= idx < problem.q:
                raise ConfigError(f"--mu index {idx} outside 0..{problem.q - 1}")
            mu[idx] = float(v)
    return problem.validate_mu(mu)


def _parse_stop(spec: str):
    mode, _, val = spec.partition(":")
    if mode not in ("estimator", "true-error") or not val:
        raise ConfigError(f"bad --stop {spec!r}, expected estimator:VAL or true-error:VAL")
    return mode, float(val)


def _manifest(out: Path, problem, sigma, seed, params, files, extra=None) -> dict:
    inventory = []
    for name in sorted(files):
        p = out / name
        inventory.append({"file": name,
                          "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                          "bytes": p.stat().st_size})
    man = {
        "tool": "almor",
        "version": __version__,
        "fingerprint": problem_fingerprint(problem, sigma),
        "config": problem.config,
        "seed": seed,
        "parameters": params,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": inventory,
    }
    if extra:
        man.update(extra)
    write_json(out / "manifest.json", man)
    return man


def _counts_grid(grid, rb, tag) -> np.ndarray:
    counts = np.zeros((grid.ny, grid.nx), dtype=int)
    for sub in range(grid.n_sub):
        ix, iy = grid.sub_coords(sub)
        counts[iy, ix] = rb.tag_counts(sub)[tag]
    return counts


def sample_on_lattice(grid, bv: BlockVector, n_pts: int = 65) -> np.ndarray:
    """Broken-Q1 values on a uniform lattice (row i = y index, column j = x).

    Points on internal interfaces evaluate in the lower-index subdomain/cell
    (floor with clamp), which keeps the output deterministic.
    """
    x0, x1, y0, y1 = grid.extents
    xs = np.linspace(x0, x1, n_pts)
    ys = np.linspace(y0, y1, n_pts)
    out = np.empty((n_pts, n_pts))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            sx = min(int((x - x0) / grid.Hx), grid.nx - 1)
            sy = min(int((y - y0) / grid.Hy), grid.ny - 1)
            sub = grid.sub_index(sx, sy)
            ox, oy = grid.sub_origin(sub)
            cx = min(int((x - ox) / grid.hx), grid.m - 1)
            cy = min(int((y - oy) / grid.hy), grid.m - 1)
            s = (x - ox) / grid.hx - cx
            t = (y - oy) / grid.hy - cy
            v = bv.blocks[sub]
            n00 = cy * (grid.m + 1) + cx
            out[i, j] = (v[n00] * (1 - s) * (1 - t) + v[n00 + 1] * s * (1 - t)
                         + v[n00 + grid.m + 1] * (1 - s) * t
                         + v[n00 + grid.m + 2] * s * t)
    return out


def cmd_offline(args) -> int:
    problem = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    disc = Discretization(problem, sigma=args.sigma)
    fp = problem_fingerprint(problem, args.sigma)
    t0 = time.perf_counter()
    rb, reports = build_initial_rb(disc, [problem.mu_train], tol=args.tol,
                                   eps_fail=args.eps_fail, n_test=args.n_test,
                                   seed=args.seed, fingerprint=fp)
    elapsed = time.perf_counter() - t0
    save_basis(out / "basis.rb", rb)
    write_csv_matrix(out / "offline_counts.csv", _counts_grid(disc.grid, rb, "offline"))
    write_json(out / "rangefinder_reports.json", [r.to_dict() for r in reports])
    params = {"tol": args.tol, "eps_fail": args.eps_fail, "n_test": args.n_test,
              "sigma": args.sigma, "mu_train": [float(v) for v in problem.mu_train],
              "offline_seconds": elapsed}
    _manifest(out, problem, args.sigma, args.seed, params,
              ["basis.rb", "offline_counts.csv", "rangefinder_reports.json"],
              extra={"fom_solve_count": disc.fom_solve_count})
    print(f"offline: {rb.total_dim} basis vectors over {disc.grid.n_sub} subdomains "
          f"(max offline {int(_counts_grid(disc.grid, rb, 'offline').max())}) "
          f"in {elapsed:.1f}s -> {out}")
    return 0


def cmd_online(args) -> int:
    problem = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    disc = Discretization(problem, sigma=args.sigma)
    fp = problem_fingerprint(problem, args.sigma)
    rb = load_basis(args.basis, disc)
    if rb.fingerprint != fp:
        raise ConfigError(
            f"basis fingerprint {rb.fingerprint[:12]}... does not match the "
            f"configuration fingerprint {fp[:12]}...")
    mu = _parse_mu(problem, args.mu)
    stop = _parse_stop(args.stop)
    u_rb, log = adaptive_solve(disc, rb, mu, stop, theta=args.theta)
    write_jsonl(out / "enrichment_log.jsonl", log.to_records())
    write_csv_matrix(out / "online_counts.csv", _counts_grid(disc.grid, rb, "online"))
    write_csv_matrix(out / "solution.csv", sample_on_lattice(disc.grid, u_rb))
    save_basis(out / "basis_updated.rb", rb)
    params = {"mu": [float(v) for v in mu], "stop": list(stop), "theta": args.theta,
              "sigma": args.sigma, "iterations": log.iterations,
              "converged": log.converged}
    _manifest(out, problem, args.sigma, args.seed, params,
              ["enrichment_log.jsonl", "online_counts.csv", "solution.csv",
               "basis_updated.rb"],
              extra={"fom_solve_count": disc.fom_solve_count})
    last = log.records[-1]
    print(f"online: {log.iterations} iterations, converged={log.converged}, "
          f"estimate {last['rel_estimate']:.3e}, "
          f"true {last['rel_true_error']}, -> {out}")
    return 0 if log.converged else 3


def cmd_validate(args) -> int:
    problem = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    disc = Discretization(problem, sigma=args.sigma)
    fp = problem_fingerprint(problem, args.sigma)
    if args.basis:
        rb = load_basis(args.basis, disc)
        if rb.fingerprint != fp:
            raise ConfigError("basis fingerprint does not match the configuration")
    else:
        rb, _ = build_initial_rb(disc, [problem.mu_train], tol=args.tol,
                                 eps_fail=args.eps_fail, n_test=args.n_test,
                                 seed=args.seed, fingerprint=fp)
    mus = [_parse_mu(problem, spec) for spec in (args.mu or [None])]
    est = Estimator(disc)
    model = ReducedModel(disc, rb)
    rows = []
    for mu in mus:
        u_h = solve_fom(disc, mu)
        _, u_rb = model.solve(mu)
        err = disc.h_norm(BlockVector(u_h.blocks - u_rb.blocks))
        rel = err / disc.h_norm(u_h)
        bd = est.estimate(u_rb, mu)
        rows.append({
            "mu": [float(v) for v in mu],
            "true_error": err,
            "rel_true_error": rel,
            "delta_loc": bd.total,
            "alpha": bd.alpha,
            "effectivity": bd.total / err if err > 0 else None,
            "global_dual_norm": est.global_dual_norm(bd.residual),
            "max_node_dual": float(bd.node_duals.max()),
        })
    report = {"runs": rows, "basis_dims": [int(d) for d in rb.dims]}
    if disc.grid.n_dofs <= DENSE_CAP:
        cpu = brute_force_cpu(disc, rb)
        checks = []
        for row, mu in zip(rows, mus):
            bound = cpu / row["alpha"] * np.sqrt(
                sum(d ** 2 for d in _node_duals(est, disc, rb, model, mu)))
            checks.append(bool(row["true_error"] <= bound * (1 + 1e-9)))
        report["c_pu_brute_force"] = cpu
        report["reliability_check"] = "pass" if all(checks) else "fail"
    else:
        report["c_pu_brute_force"] = None
        report["note"] = f"dense oracles skipped above {DENSE_CAP} DOFs"
    write_json(out / "validation_report.json", report)
    _manifest(out, problem, args.sigma, args.seed,
              {"mus": [list(m) for m in mus], "sigma": args.sigma},
              ["validation_report.json"],
              extra={"fom_solve_count": disc.fom_solve_count})
    print(f"validate: {len(rows)} parameter(s), "
          f"reliability={report.get('reliability_check', 'n/a')} -> {out}")
    return 0


def _node_duals(est, disc, rb, model, mu):
    _, u_rb = model.solve(mu)
    res = assemble_residual(disc, u_rb, mu)
    return [est.local_dual_norm(n, res) for n in range(disc.grid.n_nodes)]


def _add_common(p):
    p.add_argument("--config", help="problem configuration JSON path")
    p.add_argument("--preset", help="built-in problem preset name")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sigma", type=float, default=DEFAULT_PENALTY,
                   help="interior penalty parameter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="almor",
        description="Adaptive localized model order reduction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="train the initial reduced basis")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-2,
                   help="range finder accuracy")
    p.add_argument("--eps-fail", type=float, default=1e-15,
                   help="range finder failure probability")
    p.add_argument("--n-test", type=int, default=15,
                   help="number of held-out test samples")
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="adaptive online solve with enrichment")
    _add_common(p)
    p.add_argument("--basis", required=True, help="basis container from offline")
    p.add_argument("--mu", default="", help="parameter overrides k=v,k=v")
    p.add_argument("--stop", default="estimator:1e-3",
                   help="stopping criterion {estimator|true-error}:VALUE")
    p.add_argument("--theta", type=float, default=0.5, help="marking fraction")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("validate", help="oracle runs: true errors, effectivities")
    _add_common(p)
    p.add_argument("--basis", help="basis container (else trains a fresh one)")
    p.add_argument("--mu", action="append", help="parameter overrides, repeatable")
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--eps-fail", type=float, default=1e-15)
    p.add_argument("--n-test", type=int, default=15)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
