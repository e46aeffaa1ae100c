"""Randomized invariant and oracle checks, bundled into one JSON-able report.

Unlike :mod:`incentive_mech.oracle`, this module calls the solvers on
purpose: it compares them against the grid oracle and against known
structural properties.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .accuracy import AccuracyModel, FullBound, PowerLaw, SimpleBound
from .agents import Population, individual_optimum, individual_utility, viability_threshold
from .equilibrium import best_response, best_response_dynamics, closed_form_equilibrium
from .errors import NonConvergenceError
from .mechanisms import (
    Mechanism,
    ShapingKnown,
    ShapingTwoType,
    StandardFederated,
    check_feasible,
    check_ir,
)
from .oracle import NASH_TOL, GridSpec, certify_nash, grid_best_response

__all__ = [
    "random_model",
    "random_two_type_population",
    "random_population",
    "check_feasibility_ir",
    "check_continuity",
    "check_br_monotonicity",
    "check_oracle_agreement",
    "check_free_riding",
    "check_shaping_equilibria",
    "run_suite",
]

CONTINUITY_TOL = 1e-4
CONTINUITY_OFFSET = 1e-6
AGREEMENT_STEPS = 2.0
MONOTONE_TOL = 1e-7


def random_model(rng: np.random.Generator) -> AccuracyModel:
    kind = int(rng.integers(3))
    if kind == 0:
        return SimpleBound(float(rng.uniform(0.5, 1.0)), float(rng.uniform(1.0, 10.0)))
    if kind == 1:
        return FullBound(float(rng.uniform(0.5, 1.0)), float(rng.uniform(1.0, 10.0)))
    return PowerLaw(float(rng.uniform(0.5, 5.0)), float(rng.uniform(0.2, 1.0)), float(rng.uniform(0.0, 0.5)))


def _cost_near_threshold(model, rng, low=-3.0, high=1.0):
    # costs from well inside the viable region to a bit beyond it
    return viability_threshold(model) * math.exp(rng.uniform(low, high))


def random_two_type_population(model, rng, n_max=5) -> Population:
    n = int(rng.integers(1, n_max + 1))
    c_low = _cost_near_threshold(model, rng)
    c_high = c_low * math.exp(rng.uniform(0.0, 1.5))
    return Population.sample_two_type(c_low, c_high, rng.uniform(0.0, 1.0, n), rng)


def random_population(model, rng, n_max=5, n_min=1) -> Population:
    n = int(rng.integers(n_min, n_max + 1))
    return Population.from_costs([_cost_near_threshold(model, rng) for _ in range(n)])


def _result(name, passed, worst, **extra):
    out = {"check": name, "passed": bool(passed), "worst": float(worst)}
    out.update({k: v.item() if isinstance(v, np.generic) else v for k, v in extra.items()})
    return out


def check_feasibility_ir(rng, draws=1000, mechanisms: tuple | None = None) -> list:
    """Feasibility and IR on random (model, population, profile) draws."""
    mechanisms = mechanisms or (StandardFederated(), ShapingKnown(), ShapingTwoType())
    worst = {m.name: [0.0, 0.0, 0, 0] for m in mechanisms}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            model = random_model(rng)
            pop = random_two_type_population(model, rng)
            profile = rng.uniform(0.0, 1.0, pop.n) / pop.costs
            for mech in mechanisms:
                f = check_feasible(mech, model, pop, profile)
                ir = check_ir(mech, model, pop, profile)
                w = worst[mech.name]
                w[0], w[1] = max(w[0], f.violation), max(w[1], ir.violation)
                w[2] += not f.ok
                w[3] += not ir.ok
    out = []
    for name, (wf, wir, nf, nir) in worst.items():
        out.append(_result(f"feasibility[{name}]", nf == 0, wf, failures=nf, draws=draws))
        out.append(_result(f"individual_rationality[{name}]", nir == 0, wir, failures=nir, draws=draws))
    return out


def check_continuity(rng, draws=200) -> dict:
    """Shaping curves jump by less than the tolerance across breakpoints."""
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            model = random_model(rng)
            pop = random_two_type_population(model, rng)
            delta = float(rng.uniform(0.0, 2.0)) / float(pop.costs.min())
            for mech in (ShapingKnown(), ShapingTwoType()):
                sched = mech.schedule(model, pop, 0, delta)
                for bp in sched.breakpoints:
                    if bp <= CONTINUITY_OFFSET or not math.isfinite(bp):
                        continue
                    left, right = sched.accuracy(np.array([bp - CONTINUITY_OFFSET, bp + CONTINUITY_OFFSET]))
                    worst = max(worst, abs(right - left))
    return _result("continuity", worst < CONTINUITY_TOL, worst, draws=draws)


def check_br_monotonicity(rng, draws=200) -> dict:
    """Known-cost shaping best responses grow with the others' data and dominate pooling."""
    worst_mono = worst_dom = 0.0
    shaping, standard = ShapingKnown(), StandardFederated()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            model = random_model(rng)
            pop = random_population(model, rng, n_max=4, n_min=2)
            upper = 1.0 / pop.costs
            lo = rng.uniform(0.0, 1.0, pop.n) * upper
            hi = lo.copy()
            hi[1:] += rng.uniform(0.0, 1.0, pop.n - 1) * upper[1:]
            br_lo = best_response(shaping, model, pop, 0, lo)
            br_hi = best_response(shaping, model, pop, 0, hi)
            worst_mono = max(worst_mono, br_lo - br_hi)
            worst_dom = max(worst_dom, best_response(standard, model, pop, 0, lo) - br_lo)
    tol = MONOTONE_TOL
    return _result(
        "best_response_monotonicity",
        worst_mono <= tol and worst_dom <= tol,
        max(worst_mono, worst_dom),
        draws=draws,
        worst_decrease=worst_mono,
        worst_dominance_gap=worst_dom,
    )


def check_oracle_agreement(rng, draws=500, grid: GridSpec = GridSpec()) -> dict:
    """Solver best responses land within two refined grid steps of the grid optimum."""
    worst_steps = 0.0
    misses = 0
    mechs = (StandardFederated(), ShapingKnown(), ShapingTwoType())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            model = random_model(rng)
            pop = random_two_type_population(model, rng, n_max=4)
            mech = mechs[int(rng.integers(len(mechs)))]
            profile = rng.uniform(0.0, 1.0, pop.n) / pop.costs
            i = int(rng.integers(pop.n))
            ours = best_response(mech, model, pop, i, profile)
            theirs = grid_best_response(mech, model, pop, i, profile, grid)
            step = grid.refined_step(1.0 / float(pop.costs[i]))
            steps = abs(ours - theirs) / step
            worst_steps = max(worst_steps, steps)
            misses += steps > AGREEMENT_STEPS
    return _result("oracle_agreement", misses == 0, worst_steps, misses=misses, draws=draws, unit="refined grid steps")


def check_free_riding(rng, draws=50, grid: GridSpec = GridSpec()) -> dict:
    """Pooling dynamics end with the cheapest agent alone at its own optimum."""
    worst_dev = worst_regret = 0.0
    failures = 0
    mech = StandardFederated()
    for _ in range(draws):
        model = random_model(rng)
        pop = random_population(model, rng, n_max=10)
        res = best_response_dynamics(mech, model, pop, grid=grid)
        expected = closed_form_equilibrium(mech, model, pop)
        dev = float(np.max(np.abs(res.profile - expected)))
        worst_dev = max(worst_dev, dev)
        worst_regret = max(worst_regret, res.nash_regret)
        failures += (not res.converged) or dev > 1e-6 * max(1.0, expected.max()) or res.nash_regret > NASH_TOL
    return _result(
        "free_riding_equilibrium", failures == 0, worst_regret, failures=failures, worst_profile_gap=worst_dev, draws=draws
    )


def check_shaping_equilibria(rng, draws=50, grid: GridSpec = GridSpec(), epsilon=1e-6) -> dict:
    """Known-cost shaping equilibria dominate individual optima at equal utility."""
    mech = ShapingKnown(epsilon)
    failures = 0
    worst_regret = worst_gap = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            model = random_model(rng)
            pop = random_population(model, rng, n_max=10)
            try:
                m = closed_form_equilibrium(mech, model, pop)
            except NonConvergenceError:
                failures += 1
                continue
            regret = certify_nash(mech, model, pop, m, grid)
            stars = np.array([individual_optimum(model, c) for c in pop.costs])
            u_star = np.array([individual_utility(model, c) for c in pop.costs])
            acc = np.array([mech.schedule(model, pop, i, m.sum() - m[i]).accuracy(m[i]) for i in range(pop.n)])
            gap = np.abs(acc - pop.costs * m - u_star) - (epsilon * m + 1e-6)
            worst_regret = max(worst_regret, regret)
            worst_gap = max(worst_gap, float(gap.max()))
            failures += regret > NASH_TOL or bool(np.any(m < stars - 1e-9)) or gap.max() > 0
    return _result("shaping_equilibrium", failures == 0, worst_regret, failures=failures, worst_utility_gap=worst_gap, draws=draws)


def check_mechanism_admissible(mech: Mechanism, model, pop, rng, draws=200) -> list:
    """Feasibility and IR of one configured mechanism on random profiles."""
    worst_f = worst_ir = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(draws):
            profile = rng.uniform(0.0, 1.0, pop.n) / pop.costs
            worst_f = max(worst_f, check_feasible(mech, model, pop, profile).violation)
            worst_ir = max(worst_ir, check_ir(mech, model, pop, profile).violation)
    return [
        _result(f"configured_feasibility[{mech.name}]", worst_f <= 1e-9, worst_f),
        _result(f"configured_individual_rationality[{mech.name}]", worst_ir <= 1e-9, worst_ir),
    ]


def run_suite(seed=42, scale=1.0, extra: list | None = None) -> dict:
    """Run every check; ``scale`` shrinks or grows the number of draws."""

    def n(x):
        return max(1, int(round(x * scale)))

    rng = np.random.default_rng(seed)
    checks = []
    checks += check_feasibility_ir(rng, n(1000))
    checks.append(check_continuity(rng, n(200)))
    checks.append(check_br_monotonicity(rng, n(200)))
    checks.append(check_oracle_agreement(rng, n(100), GridSpec(2000, 2)))
    checks.append(check_free_riding(rng, n(20), GridSpec(2000, 2)))
    checks.append(check_shaping_equilibria(rng, n(20), GridSpec(2000, 2)))
    checks += extra or []
    return {"seed": seed, "passed": all(c["passed"] for c in checks), "checks": checks}
