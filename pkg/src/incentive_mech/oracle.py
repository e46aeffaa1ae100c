"""Brute-force verification by dense grids.

Nothing here calls the equilibrium solvers. Utilities are evaluated through
each mechanism's allocation curve only, so the results can be used to check
:mod:`incentive_mech.equilibrium` independently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .accuracy import AccuracyModel
from .agents import Population, TwoTypePrior, individual_optimum
from .errors import ParameterError
from .mechanisms import (
    Mechanism,
    Piece,
    Schedule,
    ShapingKnown,
    ShapingTwoType,
    StandardFederated,
    check_feasible,
    check_ir,
    solve_m_max,
    solve_two_type_schedule,
)

__all__ = [
    "GridSpec",
    "grid_best_response",
    "grid_search",
    "nash_regrets",
    "certify_nash",
    "grid_equilibrium",
    "ThresholdShaping",
    "PartialPooling",
    "TwoTypeVariant",
    "spot_check_data_max",
    "spot_check_two_type",
]

NASH_TOL = 1e-4
DATA_MAX_TOL = 1e-3


@dataclass(frozen=True)
class GridSpec:
    points_per_agent: int = 10_000
    passes: int = 2
    zoom: float = 10.0

    def __post_init__(self):
        if self.points_per_agent < 100:
            raise ParameterError(f"points_per_agent must be >= 100, got {self.points_per_agent}")
        if self.passes < 0 or self.zoom <= 1:
            raise ParameterError("need passes >= 0 and zoom > 1")

    def refined_step(self, upper: float) -> float:
        return upper / (self.points_per_agent - 1) / self.zoom ** self.passes


def grid_search(curve, cost: float, grid: GridSpec):
    """Maximize ``curve(m) - cost*m`` over ``[0, 1/cost]``.

    Returns ``(m, utility)``. Ties go to the larger ``m``.
    """
    upper = 1.0 / cost
    lo, hi = 0.0, upper
    best_m, best_u = 0.0, -math.inf
    width = upper
    for _ in range(grid.passes + 1):
        xs = np.linspace(lo, hi, grid.points_per_agent)
        us = curve(xs) - cost * xs
        top = us.max()
        j = np.flatnonzero(us == top)[-1]
        if top > best_u or (top == best_u and xs[j] > best_m):
            best_m, best_u = float(xs[j]), float(top)
        width /= grid.zoom
        lo = max(0.0, best_m - width / 2)
        hi = min(upper, best_m + width / 2)
    return best_m, best_u


def _agent_curve(mech, model, pop, i, delta):
    sched = mech.schedule(model, pop, i, delta)
    return sched.accuracy


def grid_best_response(mech, model, pop, i, profile, grid: GridSpec = GridSpec()) -> float:
    """Best grid point for agent ``i`` against the others in ``profile``."""
    m = np.asarray(profile, dtype=float)
    delta = float(m.sum() - m[i])
    curve = _agent_curve(mech, model, pop, i, delta)
    return grid_search(curve, float(pop.costs[i]), grid)[0]


def nash_regrets(mech, model, pop, profile, grid: GridSpec = GridSpec()) -> np.ndarray:
    """Per-agent gain from the best grid deviation (clipped at 0)."""
    m = np.asarray(profile, dtype=float)
    total = float(m.sum())
    out = np.empty(len(m))
    seen = {}
    for i in range(len(m)):
        delta = total - m[i]
        key = (mech.group_key(pop, i), m[i], delta)
        if key not in seen:
            curve = _agent_curve(mech, model, pop, i, delta)
            cost = float(pop.costs[i])
            current = float(curve(m[i])) - cost * m[i]
            _, best = grid_search(curve, cost, grid)
            seen[key] = max(0.0, best - current)
        out[i] = seen[key]
    return out


def certify_nash(mech, model, pop, profile, grid: GridSpec = GridSpec()) -> float:
    """Largest unilateral improvement any agent finds on the grid."""
    return float(nash_regrets(mech, model, pop, profile, grid).max())


def grid_equilibrium(
    mech: Mechanism,
    model: AccuracyModel,
    pop: Population,
    init,
    grid: GridSpec = GridSpec(points_per_agent=2000, passes=3),
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 500,
):
    """Damped synchronous grid best-response iteration.

    Returns ``(profile, converged)``.
    """
    m = np.array(init, dtype=float)
    for _ in range(max_iter):
        br = np.array([grid_best_response(mech, model, pop, i, m, grid) for i in range(len(m))])
        step = float(np.max(np.abs(br - m))) if len(m) else 0.0
        if step <= tol + 2 * grid.refined_step(1.0 / float(pop.costs.min())):
            return br, True
        m = (1 - damping) * m + damping * br
    return m, False


# ---------------------------------------------------------------------------
# alternative mechanisms for data-maximization spot checks


@dataclass(frozen=True)
class ThresholdShaping(Mechanism):
    """Shaping curve with a moved threshold and a scaled incentive slope.

    Own-data accuracy up to ``m_star + shift``, then a line of slope
    ``slope_factor * (c + epsilon)`` until it meets the pooled curve.
    """

    shift: float = 0.0
    slope_factor: float = 1.0
    epsilon: float = 1e-6

    @property
    def name(self):
        return f"threshold(shift={self.shift:+g},slope=x{self.slope_factor:g})"

    def schedule(self, model, pop, i, delta_others):
        cost = float(pop.costs[i])
        t = max(0.0, individual_optimum(model, cost) + self.shift)
        rate = self.slope_factor * (cost + self.epsilon)
        cap = solve_m_max(model, rate, 0.0, t, delta_others)
        return Schedule(
            model,
            float(delta_others),
            (
                Piece(0.0, t, "curve"),
                Piece(t, cap, "line", anchor_m=t, anchor_acc=float(model.eval(t)), slope=rate),
                Piece(cap, math.inf, "curve", shift=float(delta_others)),
            ),
        )


@dataclass(frozen=True)
class PartialPooling(Mechanism):
    """Unconditional share of the others' data: ``a(m_i + share * delta)``."""

    share: float = 0.5

    @property
    def name(self):
        return f"partial_pooling(share={self.share:g})"

    def group_key(self, pop, i):
        return ()

    def schedule(self, model, pop, i, delta_others):
        return Schedule(model, float(delta_others), (Piece(0.0, math.inf, "curve", shift=self.share * delta_others),))


@dataclass(frozen=True)
class TwoTypeVariant(Mechanism):
    """Two-type shaping with ``m_down`` pinned at a fraction of ``[m_max_high, m_max_low]``."""

    theta: float = 0.0
    epsilon: float = 1e-6

    @property
    def name(self):
        return f"two_type_variant(theta={self.theta:g})"

    def group_key(self, pop, i):
        return (float(pop.costs[i]), pop.prior.p[i])

    def schedule(self, model, pop, i, delta_others):
        prior = pop.prior
        ref = solve_two_type_schedule(model, prior.c_low, prior.c_high, prior.p[i], self.epsilon, delta_others)
        m_down = ref.m_max_high + self.theta * (ref.m_max_low - ref.m_max_high)
        c_lo, c_hi, eps = prior.c_low, prior.c_high, self.epsilon
        a_hs = float(model.eval(ref.m_star_high))
        a_d = float(model.eval(m_down + delta_others))
        if c_hi > c_lo:
            m_up = (a_d - (c_lo + eps) * m_down - a_hs + (c_hi + eps) * ref.m_star_high) / (c_hi - c_lo)
            m_up = min(max(m_up, ref.m_star_high), m_down)
        else:
            m_up = m_down
        return Schedule(
            model,
            float(delta_others),
            (
                Piece(0.0, ref.m_star_high, "curve"),
                Piece(ref.m_star_high, m_up, "line", anchor_m=ref.m_star_high, anchor_acc=a_hs, slope=c_hi + eps),
                Piece(m_up, m_down, "line", anchor_m=m_down, anchor_acc=a_d, slope=c_lo + eps),
                Piece(m_down, math.inf, "curve", shift=float(delta_others)),
            ),
            band=True,
        )


def _admissible(mech, model, pop, rng, samples=200):
    """Feasibility and IR on random profiles plus the corners of the box."""
    upper = 1.0 / pop.costs
    worst_f = worst_ir = 0.0
    profiles = [np.zeros(pop.n), upper.copy()]
    profiles += [rng.uniform(0, 1, pop.n) * upper for _ in range(samples)]
    for prof in profiles:
        worst_f = max(worst_f, check_feasible(mech, model, pop, prof).violation)
        worst_ir = max(worst_ir, check_ir(mech, model, pop, prof).violation)
    return worst_f, worst_ir


def _best_equilibrium_total(mech, model, pop, inits, grid):
    best = None
    for init in inits:
        prof, ok = grid_equilibrium(mech, model, pop, init, grid)
        if not ok:
            continue
        regret = certify_nash(mech, model, pop, prof, grid)
        if regret > NASH_TOL:
            continue
        total = float(prof.sum())
        if best is None or total > best[0]:
            best = (total, prof)
    return best


def _inits(model, pop):
    optima = np.array([individual_optimum(model, c) for c in pop.costs])
    upper = 0.9 / pop.costs
    return [optima, upper]


def spot_check_data_max(
    model: AccuracyModel,
    pop: Population,
    epsilon: float = 1e-6,
    n_alternatives: int | None = None,
    grid: GridSpec = GridSpec(points_per_agent=2000, passes=3),
    seed: int = 0,
) -> dict:
    """Compare known-cost shaping against a family of feasible IR alternatives.

    Each alternative's equilibrium comes from grid best-response iteration.
    The check passes when no admissible alternative collects more than
    ``DATA_MAX_TOL`` extra data at equilibrium.
    """
    if pop.n > 3:
        raise ParameterError("spot checks enumerate equilibria by grid search; use at most 3 agents")
    rng = np.random.default_rng(seed)
    shaping = ShapingKnown(epsilon)
    inits = _inits(model, pop)
    ref = _best_equilibrium_total(shaping, model, pop, inits, grid)
    ref_total = ref[0] if ref else float("nan")
    family = [StandardFederated()]
    family += [PartialPooling(s) for s in (0.25, 0.5, 0.75)]
    family += [
        ThresholdShaping(shift, factor, epsilon)
        for shift, factor in itertools.product((-1.0, 1.0, 5.0), (1.0, 1.5, 2.0))
    ]
    if n_alternatives is not None:
        family = family[:n_alternatives]
    rows = []
    passed = ref is not None
    for alt in family:
        worst_f, worst_ir = _admissible(alt, model, pop, rng)
        admissible = worst_f <= 1e-9 and worst_ir <= 1e-9
        found = _best_equilibrium_total(alt, model, pop, inits + ([ref[1]] if ref else []), grid)
        total = found[0] if found else None
        beats = bool(admissible and total is not None and total > ref_total + DATA_MAX_TOL)
        passed = passed and not beats
        rows.append(
            {
                "mechanism": alt.name,
                "feasibility_violation": worst_f,
                "ir_violation": worst_ir,
                "admissible": admissible,
                "equilibrium_total": total,
                "beats_shaping": beats,
            }
        )
    return {"check": "data_maximization_known_costs", "shaping_total": ref_total, "alternatives": rows, "passed": passed}


def _type_realizations(prior: TwoTypePrior):
    n = len(prior.p)
    for lows in itertools.product((True, False), repeat=n):
        prob = math.prod(p if low else 1 - p for p, low in zip(prior.p, lows))
        if prob == 0:
            continue
        costs = [prior.c_low if low else prior.c_high for low in lows]
        yield prob, Population.from_costs(costs, prior)


def _expected_total(mech, model, prior, grid):
    expected = 0.0
    for prob, pop in _type_realizations(prior):
        found = _best_equilibrium_total(mech, model, pop, _inits(model, pop), grid)
        if found is None:
            return None
        expected += prob * found[0]
    return expected


def spot_check_two_type(
    model: AccuracyModel,
    prior: TwoTypePrior,
    epsilon: float = 1e-6,
    thetas=(0.0, 0.25, 0.5, 0.75, 1.0),
    grid: GridSpec = GridSpec(points_per_agent=2000, passes=3),
) -> dict:
    """Expected equilibrium data of two-type shaping vs pinned-``m_down`` variants.

    Enumerates every type realization exactly, so keep ``len(prior.p) <= 3``.
    """
    if len(prior.p) > 3:
        raise ParameterError("spot checks enumerate type realizations; use at most 3 agents")
    ref = _expected_total(ShapingTwoType(epsilon), model, prior, grid)
    rows = []
    for theta in thetas:
        total = _expected_total(TwoTypeVariant(theta, epsilon), model, prior, grid)
        rows.append(
            {
                "mechanism": TwoTypeVariant(theta, epsilon).name,
                "expected_total": total,
                "beats_shaping": bool(total is not None and ref is not None and total > ref + DATA_MAX_TOL),
            }
        )
    return {
        "check": "data_maximization_two_type",
        "shaping_expected_total": ref,
        "alternatives": rows,
        "passed": ref is not None and not any(r["beats_shaping"] for r in rows),
    }
