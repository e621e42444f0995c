"""Command-line entry point: case generation, solves and benchmarks.

Subcommands
-----------
gen-case   write mesh/partition JSON files for a named benchmark case
solve      run one solver (mixed with a chosen impedance, or nks) over the
           case's load program, emitting a results CSV and a run log
bench      run every configured impedance plus the classical baseline on one
           case and tabulate cumulated iteration counts with gains rows
linbench   elastic study: mixed-unknown Krylov iteration counts per
           impedance as a function of the slab count

Configuration is a JSON file; command-line flags override the common knobs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cases as case_mod
from .driver import (
    LoadProgram,
    Problem,
    Thresholds,
    feti2lm_linear_study,
    run_mixed,
    run_nks,
)
from .errors import MixddError
from .fem import load_mesh

log = logging.getLogger("mixdd")

DEFAULT_BENCH_STRATEGIES = ["lumped", "superlumped", "two-scale"]
DEFAULT_LIN_STRATEGIES = ["exact-complement", "lumped", "two-scale"]


@dataclass
class ResultTable:
    """Cumulated counters per (increment, strategy) plus integer gains rows.

    Gains follow the convention ``100 * (1 - a/b)`` rounded to integer
    percent; a diverged cell is the marker string ``"x"`` and never becomes
    a number.
    """

    increments: list
    strategies: list
    krylov: dict = field(default_factory=dict)  # (strategy, increment) -> int | "x"
    newton: dict = field(default_factory=dict)
    gains: list = field(default_factory=list)  # (label, {increment: value | "x"})

    def set_row(self, strategy, report):
        got = {rec.load: rec for rec in report.increments}
        for inc in self.increments:
            rec = got.get(inc)
            if rec is None:
                self.krylov[(strategy, inc)] = "x"
                self.newton[(strategy, inc)] = "x"
            else:
                self.krylov[(strategy, inc)] = rec.cum_krylov
                self.newton[(strategy, inc)] = rec.cum_global

    def add_gain(self, label, strategy_a, strategy_b):
        row = {}
        for inc in self.increments:
            a = self.krylov.get((strategy_a, inc), "x")
            b = self.krylov.get((strategy_b, inc), "x")
            if a == "x" or b == "x" or b == 0:
                row[inc] = "x"
            else:
                row[inc] = int(round(100.0 * (1.0 - a / b)))
        self.gains.append((label, row))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["increment", "strategy", "cumulated_krylov",
                             "cumulated_global_newton"])
            for strategy in self.strategies:
                for inc in self.increments:
                    writer.writerow([
                        f"{inc:g}", strategy,
                        self.krylov[(strategy, inc)],
                        self.newton[(strategy, inc)],
                    ])
            for label, row in self.gains:
                for inc in self.increments:
                    writer.writerow([f"{inc:g}", f"gain:{label}", row[inc], ""])

    def print(self, out=sys.stdout):
        header = ["strategy"] + [f"{inc:g}" for inc in self.increments]
        print("  ".join(f"{h:>14}" for h in header), file=out)
        for strategy in self.strategies:
            cells = [str(self.krylov[(strategy, inc)]) for inc in self.increments]
            print("  ".join(f"{c:>14}" for c in [strategy] + cells), file=out)
        for label, row in self.gains:
            cells = [str(row[inc]) for inc in self.increments]
            print("  ".join(f"{c:>14}" for c in [f"gain {label} (%)"] + cells), file=out)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_case(config: dict) -> case_mod.Case:
    kind = config.get("case", "bimaterial")
    mesh_cfg = config.get("mesh", {})
    if kind == "custom" or "path" in mesh_cfg:
        mesh = load_mesh(mesh_cfg["path"])
        materials = [case_mod.material_from_dict(m) for m in config["materials"]]
        program = LoadProgram(config.get("load_program", [1.0]))
        partition = _partition_from_config(config, mesh)
        return case_mod.Case(name="custom", mesh=mesh, materials=materials,
                             partition=partition, load_program=program)
    case = case_mod.gen_case(kind, mesh_cfg.get("nx"), mesh_cfg.get("ny"))
    if "load_program" in config:
        case.load_program = LoadProgram(config["load_program"])
    part = _partition_from_config(config, case.mesh)
    if part is not None:
        case.partition = part
    return case


def _partition_from_config(config: dict, mesh):
    part = config.get("partition")
    if part is None:
        return None
    if "path" in part:
        with open(part["path"], encoding="utf-8") as fh:
            return np.asarray(json.load(fh), dtype=int)
    strategy = part.get("strategy", "slab")
    if strategy == "slab":
        return ("slab", int(part["n"]))
    if strategy == "grid":
        return ("grid", int(part["nx"]), int(part["ny"]))
    raise MixddError(f"unknown partition strategy {strategy!r} in config")


def thresholds_from_config(config: dict) -> Thresholds:
    return Thresholds(**config.get("thresholds", {}))


def _setup_logging(outdir: Path | None, verbose: bool):
    log.setLevel(logging.INFO)
    fmt = logging.Formatter("%(message)s")
    if verbose:
        sh = logging.StreamHandler()
        sh.setFormatter(fmt)
        log.addHandler(sh)
    if outdir is not None:
        fh = logging.FileHandler(outdir / "run.log", mode="w", encoding="utf-8")
        fh.setFormatter(fmt)
        log.addHandler(fh)


def _write_report_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["increment", "strategy", "cumulated_krylov",
                         "cumulated_global_newton"])
        for row in report.rows():
            writer.writerow([f"{row['increment']:g}", row["strategy"],
                             row["cumulated_krylov"], row["cumulated_global_newton"]])


def _write_residual_data(report, path):
    """Two-column residual trace (running global iteration, residual norm)."""
    with open(path, "w", encoding="utf-8") as fh:
        i = 0
        for rec in report.increments:
            for r, jump in rec.residual_history:
                fh.write(f"{i} {r + jump:.12e}\n")
                i += 1


def cmd_gen_case(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    case = case_mod.gen_case(args.kind, args.nx, args.ny)
    case_mod.save_case(case, outdir / "mesh.json", outdir / "partition.json")
    meta = {
        "case": case.name,
        "n_dofs": case.mesh.n_dofs,
        "n_elements": case.mesh.n_elements,
        "load_program": case.load_program.factors,
        **case.meta,
    }
    with open(outdir / "case.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    print(f"wrote {outdir}/mesh.json, partition.json, case.json "
          f"({case.mesh.n_dofs} dofs, {case.mesh.n_elements} elements)")
    return 0


def cmd_solve(args):
    config = load_config(args.config) if args.config else {}
    if args.impedance:
        config["impedance"] = args.impedance
    if args.srks:
        config["srks"] = True
    outdir = Path(args.out) if args.out else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    _setup_logging(outdir, args.verbose)
    case = build_case(config)
    problem = Problem.build(case.mesh, case.materials, case.partition)
    thresholds = thresholds_from_config(config)
    method = config.get("method", "mixed")
    srks = bool(config.get("srks", False))
    kwargs = dict(srks=srks, srks_theta=config.get("srks_theta", 1e-3),
                  srks_cap=config.get("srks_cap", 150))
    if method == "nks":
        report = run_nks(problem, case.load_program, thresholds, **kwargs)
    else:
        report = run_mixed(problem, case.load_program, thresholds,
                           strategy=config.get("impedance", "two-scale"), **kwargs)
    _write_report_csv(report, outdir / "results.csv")
    _write_residual_data(report, outdir / "residuals.dat")
    for row in report.rows():
        print(f"increment {row['increment']:g}: cumulated krylov "
              f"{row['cumulated_krylov']}, newton {row['cumulated_global_newton']}")
    return 0


def cmd_bench(args):
    config = load_config(args.config) if args.config else {}
    outdir = Path(args.out) if args.out else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    _setup_logging(outdir, args.verbose)
    case = build_case(config)
    strategies = config.get("bench_strategies", list(DEFAULT_BENCH_STRATEGIES))
    thresholds = thresholds_from_config(config)
    srks = bool(config.get("srks", False))
    kwargs = dict(srks=srks, srks_theta=config.get("srks_theta", 1e-3),
                  srks_cap=config.get("srks_cap", 150))
    elastic = all(not m.is_elastoplastic for m in case.materials)
    increments = list(case.load_program.factors)
    if elastic:
        # An elastic run cannot discriminate impedances through the primal
        # tangent solver, so compare the mixed-unknown Krylov counts instead.
        table = ResultTable(increments=[increments[-1]], strategies=list(strategies))
        problem = Problem.build(case.mesh, case.materials, case.partition)
        for strategy in strategies:
            try:
                _, _, rep = feti2lm_linear_study(
                    problem, strategy, thresholds.eps_krylov)
                table.krylov[(strategy, increments[-1])] = rep.iterations
                table.newton[(strategy, increments[-1])] = 1
            except MixddError:
                table.krylov[(strategy, increments[-1])] = "x"
                table.newton[(strategy, increments[-1])] = "x"
    else:
        table = ResultTable(increments=increments, strategies=strategies + ["nks"])
        for strategy in strategies:
            problem = Problem.build(case.mesh, case.materials, case.partition)
            report = run_mixed(problem, case.load_program, thresholds,
                               strategy=strategy, raise_errors=False, **kwargs)
            table.set_row(strategy, report)
        problem = Problem.build(case.mesh, case.materials, case.partition)
        report = run_nks(problem, case.load_program, thresholds,
                         raise_errors=False, **kwargs)
        table.set_row("nks", report)
        if "two-scale" in strategies:
            if "lumped" in strategies:
                table.add_gain("two-scale vs lumped", "two-scale", "lumped")
            if "superlumped" in strategies:
                table.add_gain("two-scale vs superlumped", "two-scale", "superlumped")
            if "exact-complement" in strategies:
                table.add_gain("two-scale vs exact-complement", "two-scale",
                               "exact-complement")
            table.add_gain("two-scale vs nks", "two-scale", "nks")
    table.write_csv(outdir / "bench.csv")
    table.print()
    return 0


def cmd_linbench(args):
    config = load_config(args.config) if args.config else {}
    outdir = Path(args.out) if args.out else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    _setup_logging(outdir, args.verbose)
    counts = config.get("subdomain_counts", [3, 5, 8, 13])
    strategies = config.get("lin_strategies", list(DEFAULT_LIN_STRATEGIES))
    mesh_cfg = config.get("mesh", {})
    eps_k = thresholds_from_config(config).eps_krylov
    rows = []
    for n_s in counts:
        case = case_mod.elastic_case(
            nx=mesh_cfg.get("nx") or 12 * max(counts),
            ny=mesh_cfg.get("ny") or 6,
            n_slabs=n_s,
        )
        problem = Problem.build(case.mesh, case.materials, ("slab", n_s))
        for strategy in strategies:
            try:
                _, _, rep = feti2lm_linear_study(problem, strategy, eps_k,
                                                 bdd_init=args.feti_bdd_init)
                rows.append((n_s, strategy, rep.iterations))
            except MixddError:
                rows.append((n_s, strategy, "x"))
    with open(outdir / "linbench.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_subdomains", "strategy", "krylov_iterations"])
        for row in rows:
            writer.writerow(row)
    for row in rows:
        print(f"N_s={row[0]:3d}  {row[1]:>16}: {row[2]} iterations")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mixdd",
        description="Mixed-interface nonlinear substructuring solver",
    )
    parser.add_argument("--seed", type=int, default=0,
                        help="recorded for reproducibility (runs are deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-case", help="generate mesh/partition files")
    p.add_argument("--kind", required=True,
                   choices=["bimaterial", "multiperf", "elastic"])
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen_case)

    p = sub.add_parser("solve", help="run one solver over the load program")
    p.add_argument("--config", required=True)
    p.add_argument("--impedance", choices=["lumped", "superlumped", "two-scale",
                                           "exact-complement"])
    p.add_argument("--srks", action="store_true")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="impedance comparison benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("linbench", help="elastic interface-solver comparison")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--feti-bdd-init", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_linbench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MixddError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
