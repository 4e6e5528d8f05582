"""Command-line entry point: ``ibsafe solve|simulate|sweep|verify``.

Exit status is 0 on success, 1 when a verification check (or a strict
sweep row) fails, and 2 on usage or instance validation errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import gmdp, reports, verification
from .errors import BoundVacuous, IbsError, UsageError, ValidationError
from .generators import InstanceGenerator, Mode
from .model import Instance, load_instance
from .segb import (
    Variant,
    convergence_floor,
    episode_rng,
    draw_realization,
    min_positive_support,
    monte_carlo_utility,
    run_segb_episode,
)

SUITES = ("lemma1", "thm2", "prop1", "prop2", "prop8", "claim3", "qforms", "terminal")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_TOL = {"lemma1": 1e-9, "thm2": 1e-9, "prop8": 1e-9, "qforms": 1e-12,
               "prop1": 1e-12, "terminal": 1e-12}


@dataclass
class RunConfig:
    command: str
    instance_path: Path | None = None
    out_dir: Path = Path("out")
    T: int | None = None
    episodes: int | None = None
    seed: int = 0
    variant: Variant = Variant.SEGB
    suite: str = "all"
    trials: int = 100
    t_list: list[int] = field(default_factory=list)
    threads: int = 1
    tol: float | None = None
    strict: bool = False
    force: bool = False


def bundled_instance(name: str) -> Path:
    """Path of an instance file shipped with the package (``dominance_k4``, ``normal4_grid21``)."""
    return Path(str(resources.files("ibsafe") / "data" / f"{name}.json"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ibsafe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--instance", type=Path, help="instance JSON file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--force", action="store_true",
                        help="overwrite files in --out instead of using a fresh subdirectory")

    sp = sub.add_parser("solve", help="optimal and OGP value tables")
    common(sp)
    for name in ("simulate", "sweep"):
        sp = sub.add_parser(name, help="Monte Carlo utility" if name == "simulate"
                            else "Monte Carlo utility for several horizons")
        common(sp)
        sp.add_argument("--T", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--variant", choices=[v.value for v in Variant], default="segb")
        sp.add_argument("--t-list", type=str)
        sp.add_argument("--strict", action="store_true",
                        help="exit 1 if some horizon makes the floor vacuous")
    sp = sub.add_parser("verify", help="run verification suites")
    common(sp)
    sp.add_argument("--suite", default="all")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--T", type=int)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--variant", choices=[v.value for v in Variant], default="segb")
    return p


def parse_config(argv: Sequence[str]) -> RunConfig:
    """Resolve arguments into a :class:`RunConfig`.

    Raises:
        UsageError: a flag is missing, malformed or out of range.
    """
    ns = build_parser().parse_args(list(argv))
    if ns.command is None:
        raise UsageError("choose a command: solve, simulate, sweep or verify")
    cfg = RunConfig(command=ns.command, instance_path=ns.instance, out_dir=ns.out,
                    seed=ns.seed, threads=ns.threads, force=ns.force)
    if cfg.threads < 1:
        raise UsageError("--threads must be at least 1")
    if cfg.command in ("solve", "simulate", "sweep") and cfg.instance_path is None:
        raise UsageError(f"{cfg.command} needs --instance PATH")
    if cfg.command in ("simulate", "sweep", "verify"):
        cfg.variant = Variant(ns.variant)
        cfg.T, cfg.episodes = ns.T, ns.episodes
    if cfg.command == "simulate":
        if cfg.T is None:
            raise UsageError("simulate needs --T N (the horizon)")
        if cfg.episodes is None:
            raise UsageError("simulate needs --episodes N")
        if ns.t_list:
            raise UsageError("--t-list belongs to sweep; use --T with simulate")
    if cfg.command == "sweep":
        if not ns.t_list:
            raise UsageError("sweep needs --t-list a,b,c")
        if cfg.T is not None:
            raise UsageError("sweep takes horizons from --t-list; drop --T")
        if cfg.episodes is None:
            raise UsageError("sweep needs --episodes N")
        try:
            cfg.t_list = [int(t) for t in ns.t_list.split(",") if t.strip()]
        except ValueError:
            raise UsageError("--t-list must be comma-separated integers, e.g. 50,100,200")
        if not cfg.t_list:
            raise UsageError("--t-list is empty")
    if cfg.command in ("simulate", "sweep"):
        cfg.strict = ns.strict
        if cfg.episodes < 1:
            raise UsageError("--episodes must be at least 1")
        if any(t < 1 for t in ([cfg.T] if cfg.command == "simulate" else cfg.t_list)):
            raise UsageError("horizons must be at least 1")
    if cfg.command == "verify":
        if ns.suite != "all" and ns.suite not in SUITES:
            raise UsageError(f"unknown suite {ns.suite!r}; pick one of {', '.join(SUITES)}, all")
        if ns.trials < 1:
            raise UsageError("--trials must be at least 1")
        cfg.suite, cfg.trials, cfg.tol = ns.suite, ns.trials, ns.tol
        if cfg.episodes is not None and cfg.episodes < 1:
            raise UsageError("--episodes must be at least 1")
    return cfg


def resolve_out_dir(out: Path, force: bool) -> Path:
    """``out`` itself if empty or forced, otherwise a new timestamped subdirectory."""
    out = Path(out)
    if force or not out.exists() or not any(out.iterdir()):
        out.mkdir(parents=True, exist_ok=True)
        return out
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    for n in range(1000):
        cand = out / (f"run-{stamp}" if n == 0 else f"run-{stamp}-{n}")
        if not cand.exists():
            cand.mkdir(parents=True)
            return cand
    raise UsageError(f"could not create a fresh run directory under {out}; pass --force")


def cmd_solve(cfg: RunConfig, inst: Instance, out: Path) -> int:
    W, pol = gmdp.solve_optimal(inst)
    w_ogp = gmdp.evaluate_policy(inst, gmdp.ogp_policy(inst))
    reports.write_text(out / "wstar.csv", reports.value_table_csv(inst, W))
    reports.write_text(out / "policy.csv", reports.policy_table_csv(inst, pol))
    reports.write_text(out / "ogp_values.csv", reports.value_table_csv(inst, w_ogp))
    meta = inst.metadata
    summary = reports.to_csv(("w_star", "w_ogp", "K", "above", "below"),
                             [(float(W[inst.full]), float(w_ogp[inst.full]),
                               meta["K"], meta["above"], meta["below"])])
    reports.write_text(out / "summary.csv", summary)
    print(summary.splitlines()[1])
    return EXIT_OK


def _floor(inst: Instance, T: int, w_star: float) -> float | None:
    delta = min_positive_support(inst)
    if delta is None:
        return None
    try:
        return convergence_floor(inst, T, delta, w_star)
    except BoundVacuous:
        return None


def _mc_rows(cfg: RunConfig, inst: Instance, horizons: Sequence[int]):
    W, _ = gmdp.solve_optimal(inst)
    w_star = float(W[inst.full])
    rows, vacuous = [], []
    for T in horizons:
        s = monte_carlo_utility(inst, T, cfg.episodes, cfg.seed, cfg.variant, cfg.threads)
        fl = _floor(inst, T, w_star)
        if fl is None:
            vacuous.append(T)
        rows.append(reports.mc_row(s, w_star, fl))
    return rows, vacuous


def cmd_simulate(cfg: RunConfig, inst: Instance, out: Path) -> int:
    rows, _ = _mc_rows(cfg, inst, [cfg.T])
    reports.write_text(out / "mc.csv", reports.mc_csv(rows))
    rng = episode_rng(cfg.seed, 0)
    ep = run_segb_episode(inst, draw_realization(inst, rng), cfg.T, rng, cfg.variant)
    reports.write_text(out / "trace.csv", reports.trace_csv(ep))
    print(reports.mc_csv(rows).splitlines()[1])
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, inst: Instance, out: Path) -> int:
    rows, vacuous = _mc_rows(cfg, inst, cfg.t_list)
    text = reports.to_csv(reports.MC_COLUMNS + ("per_round",),
                          [r + (r[2] / r[0],) for r in rows])
    reports.write_text(out / "sweep.csv", text)
    if vacuous:
        print(f"floor vacuous for T in {vacuous}", file=sys.stderr)
        if cfg.strict:
            return EXIT_FAIL
    return EXIT_OK


def run_suite(name: str, cfg: RunConfig, inst: Instance | None = None) -> verification.CheckReport:
    """One suite at acceptance scale with ``cfg.trials`` instances per check."""
    n, seed = cfg.trials, cfg.seed
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL.get(name)
    if name == "lemma1":
        gen = InstanceGenerator(Mode.UNRESTRICTED, 4, 4, 4, seed=seed)
        r = verification.check_equivalence_lemma(gen, n, 20, tol)
        ctrl = verification.check_equivalence_lemma(gen, min(n, 10), 5, tol, corrupt=True)
    elif name == "thm2":
        gen = InstanceGenerator(Mode.DOMINANCE_CHAIN, 5, 5, 4, seed=seed)
        r = verification.check_ogp_optimality(gen, n, tol)
        ctrl = verification.ogp_negative_control(tol=tol)
    elif name == "prop8":
        gen = InstanceGenerator(Mode.ONE_ABOVE, 1, 5, 4, seed=seed)
        r = verification.check_index_policy(gen, n, tol)
        ctrl = verification.check_index_policy(gen, n, tol, ascending=True)
    elif name == "qforms":
        one_above = InstanceGenerator(Mode.ONE_ABOVE, 1, 5, 4, seed=seed)
        one_below = InstanceGenerator(Mode.UNRESTRICTED, 5, 1, 4, seed=seed, min_below=1)
        ra = verification.check_base_case_q_forms(one_above, (n + 1) // 2, tol)
        rb = verification.check_base_case_q_forms(one_below, n // 2 or 1, tol)
        r = ra if ra.max_deviation >= rb.max_deviation else rb
        r.trials = ra.trials + rb.trials
        r.elapsed_ms = ra.elapsed_ms + rb.elapsed_ms
        ctrl = verification.check_base_case_q_forms(one_below, n // 2 or 1, tol, literal=True)
    elif name == "prop1":
        r = verification.check_two_point_suite(instances_per_h=max(1, n // 4), seed=seed, tol=tol)
        ctrl = verification.check_two_point_suite(instances_per_h=1, seed=seed, tol=tol,
                                                  corrupt=True)
    elif name == "claim3":
        r = verification.check_claim3_counterexample(0.1)
        ctrl = None
    elif name == "terminal":
        gen = InstanceGenerator(Mode.UNRESTRICTED, 3, 3, 4, seed=seed, min_above=0)
        r = verification.check_terminal_reward_oracle(gen, 2 * n, tol)
        ctrl = None
    elif name == "prop2":
        inst = inst or load_instance(bundled_instance("dominance_k4"))
        r = verification.check_convergence(inst, cfg.T or 2000, cfg.episodes or 20000, seed,
                                           cfg.variant, cfg.threads)
        ctrl = None
    else:
        raise UsageError(f"unknown suite {name!r}")
    if ctrl is not None:
        r.details["negative_control_rejected"] = not ctrl.passed
        r.details["negative_control_deviation"] = ctrl.max_deviation
    return r


def cmd_verify(cfg: RunConfig, inst: Instance | None, out: Path) -> int:
    names = SUITES if cfg.suite == "all" else (cfg.suite,)
    results = []
    for name in names:
        r = run_suite(name, cfg, inst)
        reports.write_text(out / f"{name}.json", reports.report_json(r))
        results.append(r)
        print(f"{'PASS' if r.passed else 'FAIL'} {name} max_deviation={reports.fmt(r.max_deviation)}")
    reports.write_text(out / "summary.csv", reports.summary_csv(results))
    failed = [r.check_name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        inst = load_instance(cfg.instance_path) if cfg.instance_path else None
    except (UsageError, ValidationError, IbsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read instance: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = resolve_out_dir(cfg.out_dir, cfg.force)
    handler = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep,
               "verify": cmd_verify}[cfg.command]
    return handler(cfg, inst, out)


if __name__ == "__main__":
    sys.exit(main())
