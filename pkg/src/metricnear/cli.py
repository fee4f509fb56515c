"""Command-line surface: solve, check, dykstra, export-lp.

Exit codes: 0 on success (solver converged where applicable), 1 when the
solver did not converge, 2 on usage errors.  Reports are JSON (sorted keys)
plus an optional one-line CSV append for table aggregation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .core import Norm, ProblemInstance, SolverConfig, pair_count, pair_unrank, row_count
from .dcgm import certify, dcgm_solve
from .dykstra import build_system, dykstra_solve
from .ingest import (
    build_instance,
    gen_random_instance,
    largest_component,
    load_edge_list,
    load_instance_json,
)
from .triop import decode_rows

CSV_FIELDS = [
    "solver", "input", "n", "norm", "pobj", "dobj", "eta_kkt", "eta_f",
    "dcgm_iters", "palm_iters_total", "ssn_iters_total",
    "max_working_set", "max_involved", "time_total", "converged",
]


def _add_instance_args(p: argparse.ArgumentParser):
    src = p.add_argument_group("instance source (choose one)")
    src.add_argument("--input", metavar="PATH", help="SNAP-style edge list file")
    src.add_argument("--instance-json", metavar="PATH", help="JSON instance file")
    src.add_argument("--random", type=int, metavar="N", help="random dense instance on N nodes")
    p.add_argument("--seed", type=int, default=0, help="seed for --random (default 0)")
    p.add_argument("--norm", required=True, choices=["l1", "l2", "linf"],
                   help="which weighted norm measures nearness")
    p.add_argument("--edge-dissim", type=float, default=0.0)
    p.add_argument("--nonedge-dissim", type=float, default=1.0)
    p.add_argument("--edge-weight", type=float, default=1.0)
    p.add_argument("--nonedge-weight", type=float, default=1.0)


def _add_solver_args(p: argparse.ArgumentParser):
    p.add_argument("--tol", type=float, default=1e-4, help="KKT/gap tolerance (default 1e-4)")
    p.add_argument("--feas-tol", type=float, default=1e-2, help="feasibility tolerance (default 1e-2)")
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--sigma-growth", type=float, default=2.0)
    p.add_argument("--sigma-max", type=float, default=1e6)
    p.add_argument("--h-scale", type=float, default=None,
                   help="proximal scaling c in H = c*I (default 1e-3, 1e-6 for l2)")
    p.add_argument("--palm-max-iters", type=int, default=1000)
    p.add_argument("--threads", type=int, default=None,
                   help="scan threads (default: available parallelism)")


def _make_instance(args, parser) -> tuple[ProblemInstance, dict]:
    chosen = [x for x in (args.input, args.instance_json, args.random) if x is not None]
    if len(chosen) != 1:
        parser.error("exactly one of --input, --instance-json, --random is required")
    norm = Norm(args.norm)
    prov = {"path": args.input, "instance_json": args.instance_json,
            "random_n": args.random, "seed": args.seed}
    if args.input is not None:
        g = largest_component(load_edge_list(args.input))
        inst = build_instance(g, args.edge_dissim, args.nonedge_dissim,
                              args.edge_weight, args.nonedge_weight, norm)
    elif args.instance_json is not None:
        inst = load_instance_json(args.instance_json, norm=norm)
    else:
        inst = gen_random_instance(args.random, args.seed, norm)
    return inst, prov


def _make_config(args) -> SolverConfig:
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    cfg = SolverConfig(
        tol=args.tol, feas_tol=args.feas_tol, sigma0=args.sigma0,
        sigma_growth=args.sigma_growth, sigma_max=args.sigma_max,
        h_scale=args.h_scale, palm_max_iters=args.palm_max_iters,
        threads=threads, seed=args.seed,
    )
    cfg.validate()
    return cfg


def _write_report(report: dict, output: str | None):
    text = json.dumps(report, indent=2, sort_keys=True)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _append_csv(path: str, row: dict):
    exists = os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if not exists:
            writer.writeheader()
        writer.writerow({k: row.get(k, "") for k in CSV_FIELDS})


def _save_solution(path: str, y, S=None, u=None, v=None):
    payload = {"y": np.asarray(y, dtype=float).tolist()}
    if S is not None and u is not None and len(S):
        payload["u_row_ids"] = S.row_ids.tolist()
        payload["u_values"] = np.asarray(u, dtype=float).tolist()
    if v is not None:
        payload["v"] = np.asarray(v, dtype=float).tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh)


def _load_solution(path: str, instance: ProblemInstance):
    """Accept the saved-solution JSON, a bare JSON array, or whitespace floats."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        y = np.array([float(tok) for tok in text.split()])
        return y, None, None, None
    if isinstance(data, list):
        return np.asarray(data, dtype=float), None, None, None
    y = np.asarray(data["y"], dtype=float)
    S = u = v = None
    if "u_row_ids" in data and data["u_row_ids"]:
        from .triop import build_constraint_set
        S = build_constraint_set(np.asarray(data["u_row_ids"], dtype=np.int64), instance)
        u = np.asarray(data["u_values"], dtype=float)
    if "v" in data:
        v = np.asarray(data["v"], dtype=float)
    return y, S, u, v


def cmd_solve(args, parser) -> int:
    instance, prov = _make_instance(args, parser)
    config = _make_config(args)
    y, report = dcgm_solve(instance, config)
    out = {
        "solver": "dcgm_palm",
        "version": __version__,
        "input": prov,
        "norm": instance.norm.value,
        "n": instance.n,
        "n1": instance.n1,
        "n2": instance.n2,
        "config": {
            "tol": config.tol, "feas_tol": config.feas_tol,
            "sigma0": config.sigma0, "sigma_growth": config.sigma_growth,
            "sigma_max": config.sigma_max,
            "h_scale": config.h_scale_for(instance.norm),
            "palm_max_iters": config.palm_max_iters, "threads": config.threads,
        },
        "report": report.to_dict(),
    }
    _write_report(out, args.output)
    if args.csv:
        _append_csv(args.csv, {
            "solver": "dcgm_palm",
            "input": prov["path"] or prov["instance_json"] or f"random{prov['random_n']}/seed{prov['seed']}",
            "n": instance.n, "norm": instance.norm.value,
            "pobj": report.pobj, "dobj": report.dobj,
            "eta_kkt": report.eta_kkt, "eta_f": report.eta_f,
            "dcgm_iters": report.dcgm_iters,
            "palm_iters_total": report.palm_iters_total,
            "ssn_iters_total": report.ssn_iters_total,
            "max_working_set": max(report.working_set_sizes, default=0),
            "max_involved": max(report.involved_var_counts, default=0),
            "time_total": report.timings.get("total", 0.0),
            "converged": report.converged,
        })
    if args.save_solution:
        st = report.final_state
        _save_solution(args.save_solution, y, report.working_set, st.u, st.v)
    return 0 if report.converged else 1


def cmd_check(args, parser) -> int:
    instance, prov = _make_instance(args, parser)
    y, S, u, v = _load_solution(args.solution, instance)
    if y.shape != (instance.n1,):
        print(f"error: solution length {y.size} != n1 = {instance.n1}", file=sys.stderr)
        return 1
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    cert = certify(y, instance, S=S, u=u, v=v, threads=threads)
    out = {
        "solver": "check",
        "input": prov,
        "norm": instance.norm.value,
        "n": instance.n,
        "eta_f": cert.eta_f,
        "eta_kkt": cert.eta_kkt,
        "pobj": cert.pobj,
        "dobj": cert.dobj,
    }
    _write_report(out, args.output)
    return 0


def cmd_dykstra(args, parser) -> int:
    instance, prov = _make_instance(args, parser)
    system = build_system(instance, gamma=args.gamma)
    z, sweeps, rep = dykstra_solve(system, max_iters=args.max_iters,
                                   rg_feas_tol=args.stop,
                                   check_every=args.check_every)
    y = z[: instance.n1]
    out = {
        "solver": "dykstra",
        "version": __version__,
        "input": prov,
        "norm": instance.norm.value,
        "n": instance.n,
        "gamma": system.gamma,
        "max_iters": args.max_iters,
        "report": rep.to_dict(),
    }
    _write_report(out, args.output)
    if args.csv:
        _append_csv(args.csv, {
            "solver": "dykstra",
            "input": prov["path"] or prov["instance_json"] or f"random{prov['random_n']}/seed{prov['seed']}",
            "n": instance.n, "norm": instance.norm.value,
            "pobj": rep.objective, "eta_f": rep.eta_f,
            "dcgm_iters": sweeps,
            "time_total": rep.time_total, "converged": rep.converged,
        })
    if args.save_solution:
        _save_solution(args.save_solution, y)
    return 0 if rep.converged else 1


def _var_names(n: int):
    return [f"y_{i}_{j}" for i, j in (pair_unrank(k, n) for k in range(pair_count(n)))]


def cmd_export_lp(args, parser) -> int:
    if args.norm == "l2":
        parser.error("--norm l2 has no LP form (QP export is out of scope)")
    instance, prov = _make_instance(args, parser)
    n = instance.n
    if args.full:
        if n > 60:
            parser.error(f"--full export limited to n <= 60 (got n={n})")
        row_ids = np.arange(row_count(n), dtype=np.int64)
    else:
        _, report = dcgm_solve(instance, _make_config(args))
        row_ids = report.working_set.row_ids
    long_idx, a_idx, b_idx = decode_rows(row_ids, n)
    x = instance.dissimilarity.materialize()
    w = instance.weights.materialize()
    b_vals = x[a_idx] + x[b_idx] - x[long_idx]
    names = _var_names(n)

    lines = [f"\\ metric nearness {args.norm} reformulation, n={n}, {len(row_ids)} triangle rows"]
    lines.append("Minimize")
    if args.norm == "l1":
        terms = []
        for k in range(instance.n1):
            i, j = pair_unrank(k, n)
            terms.append(f"{w[k]:.17g} s_{i}_{j}")
        lines.append(" obj: " + " + ".join(terms))
    else:
        lines.append(" obj: t")
    lines.append("Subject To")
    for r, rid in enumerate(row_ids):
        lines.append(
            f" tri_{rid}: {names[long_idx[r]]} - {names[a_idx[r]]} - {names[b_idx[r]]}"
            f" <= {b_vals[r]:.17g}")
    for k in range(instance.n1):
        i, j = pair_unrank(k, n)
        aux = f"s_{i}_{j}" if args.norm == "l1" else "t"
        lines.append(f" absp_{i}_{j}: y_{i}_{j} - {aux} <= 0")
        lines.append(f" absm_{i}_{j}: - y_{i}_{j} - {aux} <= 0")
    lines.append("Bounds")
    for name in names:
        lines.append(f" {name} free")
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
        print(f"wrote {args.output}: {len(names) + (instance.n1 if args.norm == 'l1' else 1)} "
              f"variables, {len(row_ids) + 2 * instance.n1} constraints")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metricnear",
        description="Weighted l1/l2/linf metric nearness solver (constraint "
                    "generation + semismooth-Newton proximal augmented Lagrangian).")
    parser.add_argument("--version", action="version", version=f"metricnear {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the constraint-generation solver")
    _add_instance_args(p_solve)
    _add_solver_args(p_solve)
    p_solve.add_argument("--output", metavar="PATH", help="write the JSON report here")
    p_solve.add_argument("--csv", metavar="PATH", help="append a CSV summary row")
    p_solve.add_argument("--save-solution", metavar="PATH", help="write y/u/v as JSON")

    p_check = sub.add_parser("check", help="certify a solution file against all constraints")
    _add_instance_args(p_check)
    p_check.add_argument("--solution", required=True, metavar="PATH")
    p_check.add_argument("--threads", type=int, default=None)
    p_check.add_argument("--output", metavar="PATH")

    p_dyk = sub.add_parser("dykstra", help="run the Dykstra projection baseline")
    _add_instance_args(p_dyk)
    p_dyk.add_argument("--gamma", type=float, default=None,
                       help="regularization weight (default 1; 500 for linf)")
    p_dyk.add_argument("--max-iters", type=int, default=10_000)
    p_dyk.add_argument("--stop", type=float, default=1e-2,
                       help="stop when max(R_g, eta_f) drops below this")
    p_dyk.add_argument("--check-every", type=int, default=25)
    p_dyk.add_argument("--output", metavar="PATH")
    p_dyk.add_argument("--csv", metavar="PATH")
    p_dyk.add_argument("--save-solution", metavar="PATH")

    p_lp = sub.add_parser("export-lp", help="write the l1/linf LP reformulation")
    _add_instance_args(p_lp)
    _add_solver_args(p_lp)
    p_lp.add_argument("--full", action="store_true",
                      help="export all 3*C(n,3) rows (n <= 60) instead of a solve's working set")
    p_lp.add_argument("--output", metavar="PATH")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": cmd_solve,
        "check": cmd_check,
        "dykstra": cmd_dykstra,
        "export-lp": cmd_export_lp,
    }
    try:
        return handlers[args.command](args, parser)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
