"""Nash equilibria of the data-contribution game.

:func:`best_response` maximizes one agent's utility exactly by enumerating
the candidate maximizers of each schedule piece. :func:`best_response_dynamics`
iterates damped synchronous best responses for any mechanism, and
:func:`closed_form_equilibrium` uses the known structure of each mechanism's
equilibrium (cheapest agent alone, or the joint fixed point of the shaping
breakpoints).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .accuracy import INFINITE, AccuracyModel
from .agents import Population, individual_optimum
from .errors import NonConvergenceError, ParameterError
from .mechanisms import (
    Mechanism,
    ShapingKnown,
    ShapingTwoType,
    StandardFederated,
    allocate,
    solve_m_max,
    solve_two_type_schedule,
)
from .oracle import GridSpec, certify_nash

__all__ = [
    "EquilibriumResult",
    "best_response",
    "best_response_dynamics",
    "closed_form_equilibrium",
    "equilibrium_result",
    "min_viability_total",
    "min_agents_for_viability",
    "default_init",
]

FIXED_POINT_TOL = 1e-8
MAX_ITER = 10_000
DAMPING = 0.5
TIE_TOL = 1e-12
SELF_CHECK_TOL = 1e-7


@dataclass
class EquilibriumResult:
    profile: np.ndarray
    accuracies: np.ndarray
    utilities: np.ndarray
    converged: bool
    iterations: int
    nash_regret: float

    @property
    def total(self) -> float:
        return float(np.sum(self.profile))

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("profile", "accuracies", "utilities"):
            out[key] = [float(x) for x in out[key]]
        out["nash_regret"] = float(self.nash_regret)
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


# ---------------------------------------------------------------------------
# best responses


def _golden_refine(curve, cost, upper, points=2001):
    # opaque schedules: coarse scan, then bounded Brent on the best cell
    xs = np.linspace(0.0, upper, points)
    us = curve(xs) - cost * xs
    j = int(np.flatnonzero(us == us.max())[-1])
    lo, hi = xs[max(j - 1, 0)], xs[min(j + 1, points - 1)]
    res = optimize.minimize_scalar(
        lambda x: -(float(curve(x)) - cost * x), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}
    )
    return np.array([0.0, xs[j], float(res.x), upper])


def _best_of(curve, cost, cands):
    us = np.asarray(curve(cands), dtype=float) - cost * cands
    top = us.max()
    ties = np.flatnonzero(us >= top - TIE_TOL)
    j = ties[-1]
    return float(cands[j]), float(us[j])


def _best_response_schedule(sched, cost):
    upper = 1.0 / cost
    if hasattr(sched, "candidate_points"):
        cands = sched.candidate_points(cost, upper)
    else:
        cands = _golden_refine(sched.accuracy, cost, upper)
    return _best_of(sched.accuracy, cost, cands)


def best_response(mech: Mechanism, model: AccuracyModel, pop: Population, i: int, profile) -> float:
    """Utility-maximizing contribution of agent ``i`` over ``[0, 1/c_i]``.

    The utility is the maximum of a decreasing line and a concave branch
    within each schedule piece, so its maximizers are among the piece
    endpoints and the stationary points of the curve pieces. Ties go to the
    larger contribution.
    """
    m = np.asarray(profile, dtype=float)
    delta = float(m.sum() - m[i])
    sched = mech.schedule(model, pop, i, delta)
    return _best_response_schedule(sched, float(pop.costs[i]))[0]


def _group_best_responses(mech, model, pop, m):
    total = float(m.sum())
    cache = {}
    out = np.empty(len(m))
    for i in range(len(m)):
        key = (mech.group_key(pop, i), m[i])
        if key not in cache:
            sched = mech.schedule(model, pop, i, total - m[i])
            cache[key] = _best_response_schedule(sched, float(pop.costs[i]))[0]
        out[i] = cache[key]
    return out


# ---------------------------------------------------------------------------
# viability


def min_viability_total(model: AccuracyModel, cost: float, n: int) -> float:
    """Largest positive root of ``(cost/n) m = a(m)``, or 0 if there is none."""
    if n < 1 or not cost > 0:
        raise ParameterError(f"need n >= 1 and cost > 0, got n={n}, cost={cost}")
    rate = cost / n

    def h(m):
        return float(model.eval(m)) - rate * m

    m0 = model.min_viable_dataset
    peak = model.inverse_slope(rate)
    peak = m0 if peak is INFINITE else max(peak, m0)
    if h(peak) < 0:
        return 0.0
    hi = max(2.0 * peak, 1.0)
    while h(hi) >= 0:
        hi *= 2.0
    return optimize.bisect(h, peak, hi, xtol=1e-300, rtol=1e-14, maxiter=2000)


def min_agents_for_viability(model: AccuracyModel, cost: float, n_max: int = 10**12) -> int:
    """Smallest ``n`` whose equal-cost agents can sustain positive total data."""
    if min_viability_total(model, cost, 1) > 0:
        return 1
    hi = 2
    while min_viability_total(model, cost, hi) <= 0:
        hi *= 2
        if hi > n_max:
            raise ParameterError(f"no viable n below {n_max} for cost {cost}")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if min_viability_total(model, cost, mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def default_init(model: AccuracyModel, pop: Population) -> np.ndarray:
    """Individual optima, or an even split of the viable total if those are all zero."""
    init = np.array([individual_optimum(model, c) for c in pop.costs])
    if np.all(init == 0):
        total = min_viability_total(model, float(pop.costs.mean()), pop.n)
        init = np.full(pop.n, total / pop.n)
    return np.minimum(init, 1.0 / pop.costs)


# ---------------------------------------------------------------------------
# equilibrium solvers


def equilibrium_result(mech, model, pop, profile, converged=True, iterations=0, grid: GridSpec | None = GridSpec()):
    """Package a profile with accuracies, utilities and a grid regret certificate."""
    m = np.asarray(profile, dtype=float)
    acc = allocate(mech, model, pop, m)
    regret = certify_nash(mech, model, pop, m, grid) if grid is not None else float("nan")
    return EquilibriumResult(m, acc, acc - pop.costs * m, bool(converged), int(iterations), regret)


def best_response_dynamics(
    mech: Mechanism,
    model: AccuracyModel,
    pop: Population,
    init=None,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = MAX_ITER,
    damping: float = DAMPING,
    grid: GridSpec | None = GridSpec(),
) -> EquilibriumResult:
    """Damped synchronous best-response iteration.

    Stops once every agent's best response is within ``tol`` of its current
    contribution. Running out of iterations yields ``converged=False``.
    """
    mech.validate(pop)
    m = default_init(model, pop) if init is None else np.array(init, dtype=float)
    if m.shape != (pop.n,) or np.any(m < 0):
        raise ParameterError("init must be a non-negative vector with one entry per agent")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        br = _group_best_responses(mech, model, pop, m)
        if np.max(np.abs(br - m)) < tol:
            converged = True
            break
        m = (1 - damping) * m + damping * br
    return equilibrium_result(mech, model, pop, m, converged, it, grid)


def _groups(mech, pop):
    keys, index = {}, np.empty(pop.n, dtype=int)
    for i in range(pop.n):
        index[i] = keys.setdefault(mech.group_key(pop, i), len(keys))
    reps = np.zeros(len(keys), dtype=int)
    for i in range(pop.n - 1, -1, -1):
        reps[index[i]] = i
    counts = np.bincount(index, minlength=len(keys))
    return index, reps, counts


def _fixed_point(update, m0, counts, tol, max_iter, damping):
    m = np.array(m0, dtype=float)
    for it in range(1, max_iter + 1):
        total = float(counts @ m)
        target = np.array([update(g, total - m[g]) for g in range(len(m))])
        if np.max(np.abs(target - m)) < tol:
            return target, it
        m = (1 - damping) * m + damping * target
    raise NonConvergenceError(f"fixed point not reached in {max_iter} iterations", last=m, iterations=max_iter)


def _self_check(mech, model, pop, profile, reps):
    total = float(profile.sum())
    for i in reps:
        sched = mech.schedule(model, pop, int(i), total - profile[i])
        cost = float(pop.costs[i])
        _, best = _best_response_schedule(sched, cost)
        current = float(sched.accuracy(profile[i])) - cost * profile[i]
        if best - current > SELF_CHECK_TOL:
            raise NonConvergenceError(
                f"agent {int(i)} can gain {best - current:.3g} by deviating", last=profile
            )


def closed_form_equilibrium(
    mech: Mechanism,
    model: AccuracyModel,
    pop: Population,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = MAX_ITER,
    damping: float = DAMPING,
) -> np.ndarray:
    """Equilibrium profile from each mechanism's known structure.

    Standard federated: the cheapest agent (lowest index on ties) collects
    its individual optimum, everyone else free-rides. Shaping mechanisms:
    each agent sits at its breakpoint (``m_max``, or ``m_up``/``m_down`` by
    realized type), solved jointly by damped fixed-point iteration.
    """
    mech.validate(pop)
    if isinstance(mech, StandardFederated):
        out = np.zeros(pop.n)
        j = int(np.argmin(pop.costs))
        out[j] = individual_optimum(model, float(pop.costs[j]))
        return out
    index, reps, counts = _groups(mech, pop)
    costs = pop.costs[reps]
    if isinstance(mech, ShapingKnown):
        stars = np.array([individual_optimum(model, c) for c in costs])

        def update(g, delta):
            return solve_m_max(model, costs[g], mech.epsilon, stars[g], delta)

    elif isinstance(mech, ShapingTwoType):
        prior = pop.prior
        stars = np.array([individual_optimum(model, c) for c in costs])
        is_high = costs == prior.c_high
        ps = [prior.p[r] for r in reps]

        def update(g, delta):
            bp = solve_two_type_schedule(model, prior.c_low, prior.c_high, ps[g], mech.epsilon, delta)
            return bp.m_up if is_high[g] and prior.c_high != prior.c_low else bp.m_down

    else:
        raise ParameterError(f"no closed form for {type(mech).__name__}; use best_response_dynamics")
    start = stars
    if np.all(stars == 0):
        seed = min_viability_total(model, float(pop.costs.mean()), pop.n) / pop.n
        start = np.full(len(stars), seed)
    try:
        groups_m, _ = _fixed_point(update, start, counts, tol, max_iter, damping)
    except NonConvergenceError as exc:
        raise NonConvergenceError(str(exc), last=exc.last[index], iterations=exc.iterations) from None
    profile = groups_m[index]
    _self_check(mech, model, pop, profile, reps)
    return profile
