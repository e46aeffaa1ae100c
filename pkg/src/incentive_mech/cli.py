"""Command-line driver: parameter sweeps, two-type Monte Carlo, verification.

Exit codes: 0 success, 1 validation error, 2 verification failure,
3 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .agents import Population, individual_optimum, individual_utility, viability_threshold
from .config import ExperimentConfig, load_config
from .equilibrium import best_response_dynamics, closed_form_equilibrium, min_agents_for_viability
from .errors import DomainError, NonConvergenceError, ParameterError
from .mechanisms import (
    DEFAULT_EPSILON,
    ShapingKnown,
    ShapingTwoType,
    StandardFederated,
    allocate,
    solve_two_type_schedule,
)
from .oracle import certify_nash
from .verify import check_mechanism_admissible, run_suite

__all__ = [
    "EXIT_OK",
    "EXIT_INVALID",
    "EXIT_VERIFY",
    "EXIT_NONCONVERGED",
    "cmd_individual_sweep",
    "cmd_equilibrium_sweep",
    "cmd_min_agents",
    "cmd_two_type",
    "cmd_verify",
    "main",
]

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_NONCONVERGED = 0, 1, 2, 3
CERTIFY_EVERY = 10

INDIVIDUAL_SWEEP = {"parameter": "c", "start": 1e-6, "stop": 1e-1, "scale": "log", "points": 51, "k_values": [1.0, 10.0, 100.0]}
EQUILIBRIUM_SWEEP = {"parameter": "n", "start": 1e3, "stop": 1e5, "scale": "log", "points": 9}
MIN_AGENTS_SWEEP = {"parameter": "c", "start": 0.05, "stop": 1.0, "scale": "linear", "points": 20, "k_values": [10.0, 20.0, 40.0]}
TWO_TYPE = {"c_low": 0.0005, "c_high": 0.001, "p": 0.5, "n": 4, "draws": 200}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.12g}"
    return "" if x is None else str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ParameterError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _k_values(cfg, sweep):
    return sweep.k_values or (float(cfg.section("accuracy").get("k", 1.0)),)


# ---------------------------------------------------------------------------
# individual sweep


def _individual_row(args):
    model_cfg, c, k = args
    model = model_cfg.model(k=k)
    cutoff = viability_threshold(model)
    m = individual_optimum(model, c)
    return (k, c, m, individual_utility(model, c), cutoff)


def cmd_individual_sweep(cfg: ExperimentConfig, jobs: int = 1):
    """Rows ``(c, k, m_star, u_star, viability_cutoff)`` sorted by ``(k, c)``."""
    sweep = cfg.sweep(INDIVIDUAL_SWEEP)
    if sweep.parameter != "c":
        raise ParameterError("individual-sweep sweeps the cost; set sweep.parameter = 'c'")
    tasks = [(cfg, float(c), float(k)) for k in _k_values(cfg, sweep) for c in sweep.values()]
    rows = sorted(_map(_individual_row, tasks, jobs))
    header = ("c", "k", "m_star", "u_star", "viability_cutoff")
    return header, [(c, k, m, u, cut) for k, c, m, u, cut in rows]


# ---------------------------------------------------------------------------
# equilibrium sweep


def _equilibrium_row(args):
    cfg, n, c, k, certify = args
    model = cfg.model(k=k)
    mech = ShapingKnown(float(cfg.section("mechanism").get("epsilon", DEFAULT_EPSILON)))
    pop = Population.from_costs([c] * n)
    status, regret = "ok", float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            profile = closed_form_equilibrium(mech, model, pop)
        except NonConvergenceError as exc:
            profile = np.asarray(exc.last if exc.last is not None else np.zeros(n), dtype=float)
            status = "nonconverged"
    total = float(profile.sum())
    if certify and status == "ok":
        regret = certify_nash(mech, model, pop, profile)
    return (n, c, k, total, total / n, individual_optimum(model, c), regret, status)


def cmd_equilibrium_sweep(cfg: ExperimentConfig, jobs: int = 1):
    """Known-cost shaping equilibria of identical agents along one sweep axis.

    Every tenth point gets a grid Nash certificate; other points leave the
    ``nash_regret`` column as ``nan``.
    """
    sweep = cfg.sweep(EQUILIBRIUM_SWEEP)
    pop_cfg = cfg.section("population")
    base = {"n": int(pop_cfg.get("n", 10_000)), "c": float(pop_cfg.get("cost", 0.1)),
            "k": float(cfg.section("accuracy").get("k", 1.0))}
    tasks = []
    for j, x in enumerate(sweep.values()):
        point = dict(base)
        point[sweep.parameter] = int(x) if sweep.parameter == "n" else float(x)
        tasks.append((cfg, point["n"], point["c"], point["k"], j % CERTIFY_EVERY == 0))
    rows = _map(_equilibrium_row, tasks, jobs)
    key = {"n": 0, "c": 1, "k": 2}[sweep.parameter]
    rows.sort(key=lambda r: r[key])
    header = ("n", "c", "k", "total_data", "per_agent", "m_star", "nash_regret", "status")
    return header, rows


# ---------------------------------------------------------------------------
# minimum number of agents


def _min_agents_row(args):
    cfg, c, k, epsilon = args
    model = cfg.model(k=k)
    # with identical agents the shaping fixed point is positive exactly when
    # the pooled line of slope (c + epsilon)/n cuts the accuracy curve
    return (k, c, min_agents_for_viability(model, c + epsilon))


def cmd_min_agents(cfg: ExperimentConfig, jobs: int = 1):
    """Rows ``(c, k, n_min)``: fewest identical agents with a positive shaping equilibrium."""
    sweep = cfg.sweep(MIN_AGENTS_SWEEP)
    if sweep.parameter != "c":
        raise ParameterError("min-agents sweeps the cost; set sweep.parameter = 'c'")
    epsilon = float(cfg.section("mechanism").get("epsilon", DEFAULT_EPSILON))
    tasks = [(cfg, float(c), float(k), epsilon) for k in _k_values(cfg, sweep) for c in sweep.values()]
    rows = sorted(_map(_min_agents_row, tasks, jobs))
    return ("c", "k", "n_min"), [(c, k, n) for k, c, n in rows]


# ---------------------------------------------------------------------------
# two-type Monte Carlo


def cmd_two_type(cfg: ExperimentConfig) -> dict:
    """Two-type shaping equilibria over sampled type realizations."""
    tt = dict(TWO_TYPE)
    tt.update(cfg.section("two_type"))
    c_low, c_high, n, draws = float(tt["c_low"]), float(tt["c_high"]), int(tt["n"]), int(tt["draws"])
    p = tt["p"]
    p = [float(p)] * n if np.ndim(p) == 0 else [float(x) for x in p]
    if len(p) != n:
        raise ParameterError(f"two_type.p has {len(p)} entries for n={n}")
    if draws < 1:
        raise ParameterError("two_type.draws must be >= 1")
    model = cfg.model()
    epsilon = float(cfg.section("mechanism").get("epsilon", DEFAULT_EPSILON))
    mech = ShapingTwoType(epsilon)
    standard = StandardFederated()
    rng = np.random.default_rng(cfg.seed)
    ms_low, ms_high = individual_optimum(model, c_low), individual_optimum(model, c_high)
    us_low, us_high = individual_utility(model, c_low), individual_utility(model, c_high)

    totals, std_totals = [], []
    m_up, m_down, u_low, u_high = [], [], [], []
    fallback = unresolved = 0
    down_clamp_ok = True
    up_between = True
    for _ in range(draws):
        pop = Population.sample_two_type(c_low, c_high, p, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                prof = closed_form_equilibrium(mech, model, pop)
            except NonConvergenceError:
                fallback += 1
                res = best_response_dynamics(mech, model, pop, grid=None)
                if not res.converged:
                    unresolved += 1
                prof = res.profile
            acc = allocate(mech, model, pop, prof)
        util = acc - pop.costs * prof
        low = pop.costs == c_low
        totals.append(prof.sum())
        std_totals.append(closed_form_equilibrium(standard, model, pop).sum())
        m_down += list(prof[low])
        u_low += list(util[low])
        if c_high > c_low:
            m_up += list(prof[~low])
            u_high += list(util[~low])
        for i in range(n):
            bp = solve_two_type_schedule(model, c_low, c_high, p[i], epsilon, prof.sum() - prof[i])
            if p[i] >= c_low / (c_low + c_high) and bp.m_down != bp.m_max_low:
                down_clamp_ok = False
            if not (ms_high - 1e-9 <= bp.m_up <= ms_low + 1e-9):
                up_between = False

    def _mean(xs):
        return float(np.mean(xs)) if xs else None

    rent = [u - us_low for u in u_low]
    high_gap = [abs(u - us_high) for u in u_high]
    return {
        "model": model.to_config(),
        "c_low": c_low,
        "c_high": c_high,
        "p": p,
        "n": n,
        "epsilon": epsilon,
        "draws": draws,
        "seed": cfg.seed,
        "individual": {"m_star_low": ms_low, "m_star_high": ms_high, "u_star_low": us_low, "u_star_high": us_high},
        "mean_m_up": _mean(m_up),
        "mean_m_down": _mean(m_down),
        "mean_utility_low": _mean(u_low),
        "mean_utility_high": _mean(u_high),
        "mean_information_rent": _mean(rent),
        "min_information_rent": min(rent) if rent else None,
        "max_high_utility_gap": max(high_gap) if high_gap else None,
        "expected_total": float(np.mean(totals)),
        "expected_total_standard": float(np.mean(std_totals)),
        "m_up_between_individual_optima": up_between,
        "m_down_at_low_m_max_when_p_large": down_clamp_ok,
        "dynamics_fallbacks": fallback,
        "unresolved": unresolved,
    }


# ---------------------------------------------------------------------------
# verification


def cmd_verify(cfg: ExperimentConfig) -> dict:
    """Randomized property suite plus admissibility of the configured mechanism."""
    section = cfg.section("verify")
    scale = float(section.get("scale", 1.0))
    max_agents = int(section.get("max_agents", 5))
    if not scale > 0 or max_agents < 1:
        raise ParameterError("verify.scale must be > 0 and verify.max_agents >= 1")
    model, mech, pop = cfg.model(), cfg.mechanism(), cfg.population()
    if pop.n > max_agents:
        prior = pop.prior
        if prior is not None:
            prior = type(prior)(prior.c_low, prior.c_high, prior.p[:max_agents])
        pop = Population(pop.agents[:max_agents], prior)
    mech.validate(pop)
    rng = np.random.default_rng(cfg.seed)
    extra = check_mechanism_admissible(mech, model, pop, rng, draws=max(1, int(200 * scale)))
    return run_suite(cfg.seed, scale, extra)


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incentive-mech", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("individual-sweep", "individual optimum vs cost (CSV)"),
        ("equilibrium-sweep", "shaping equilibrium totals along a sweep (CSV)"),
        ("min-agents", "fewest agents with a positive equilibrium (CSV)"),
        ("two-type", "two-type Monte Carlo report (JSON)"),
        ("verify", "property and oracle suite (JSON, exit 2 on failure)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config file; built-in defaults if omitted")
        p.add_argument("--out", help="output path; stdout if omitted")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default: config seed, else 42)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a config value, e.g. accuracy.k=10 (repeatable)")
        if name in ("individual-sweep", "equilibrium-sweep", "min-agents"):
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed)
        out = args.out or cfg.output
        if args.command == "two-type":
            report = cmd_two_type(cfg)
            _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", out)
            return EXIT_NONCONVERGED if report["unresolved"] else EXIT_OK
        if args.command == "verify":
            report = cmd_verify(cfg)
            _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", out)
            if not report["passed"]:
                failed = [c["check"] for c in report["checks"] if not c["passed"]]
                print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
                return EXIT_VERIFY
            return EXIT_OK
        command = {
            "individual-sweep": cmd_individual_sweep,
            "equilibrium-sweep": cmd_equilibrium_sweep,
            "min-agents": cmd_min_agents,
        }[args.command]
        header, rows = command(cfg, jobs=max(1, args.jobs))
        _emit(_csv_text(header, rows), out)
        if "status" in header and any(r[header.index("status")] != "ok" for r in rows):
            print("some sweep points did not converge; see the status column", file=sys.stderr)
            return EXIT_NONCONVERGED
        return EXIT_OK
    except (ParameterError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
