"""Allocation rules mapping contribution profiles to per-agent accuracies.

Every mechanism hands each agent a piecewise accuracy curve in its own
contribution ``m_i``, given the others' total ``delta_others``. The curve is a
:class:`Schedule`: a sorted list of :class:`Piece` objects that are either a
shifted copy of the accuracy curve or a straight line. Solvers rely on that
structure to enumerate candidate maximizers exactly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .accuracy import INFINITE, AccuracyModel
from .agents import Population, individual_optimum
from .errors import ParameterError

__all__ = [
    "DEFAULT_EPSILON",
    "FEASIBILITY_TOL",
    "IR_TOL",
    "Piece",
    "Schedule",
    "Mechanism",
    "StandardFederated",
    "ShapingKnown",
    "ShapingTwoType",
    "ShapingScheduleKnown",
    "ShapingScheduleTwoType",
    "CheckResult",
    "solve_m_max",
    "solve_two_type_schedule",
    "crossing_residual",
    "allocate",
    "check_feasible",
    "check_ir",
    "allocation_trace",
    "write_allocation_trace",
    "mechanism_from_config",
]

DEFAULT_EPSILON = 1e-6
FEASIBILITY_TOL = 1e-9
IR_TOL = 1e-9
ROOT_RTOL = 1e-13


@lru_cache(maxsize=4096)
def _m_star(model: AccuracyModel, cost: float) -> float:
    return individual_optimum(model, cost)


@dataclass(frozen=True)
class Piece:
    """One segment ``[lo, hi]`` of a schedule.

    ``kind == "curve"``: accuracy ``a(m + shift)``.
    ``kind == "line"``: ``anchor_acc + slope * (m - anchor_m)``.
    """

    lo: float
    hi: float
    kind: str
    shift: float = 0.0
    anchor_m: float = 0.0
    anchor_acc: float = 0.0
    slope: float = 0.0

    def value(self, model: AccuracyModel, m):
        if self.kind == "curve":
            return model.eval(np.asarray(m, dtype=float) + self.shift)
        return self.anchor_acc + self.slope * (np.asarray(m, dtype=float) - self.anchor_m)


@dataclass(frozen=True)
class Schedule:
    """Accuracy returned to one agent as a function of its own contribution.

    With ``band=True`` the piecewise value is clipped into
    ``[a(m), a(m + delta_others)]``, which makes the curve feasible and
    individually rational whatever the pieces do.
    """

    model: AccuracyModel
    delta_others: float
    pieces: tuple
    band: bool = False

    @property
    def breakpoints(self) -> tuple:
        return tuple(p.hi for p in self.pieces[:-1])

    def piece_index(self, m):
        return np.searchsorted(np.asarray(self.breakpoints), np.asarray(m, dtype=float), side="left")

    def unclipped(self, m):
        arr = np.asarray(m, dtype=float)
        if np.any(arr < 0):
            raise ParameterError(f"contributions must be non-negative, got {m!r}")
        idx = self.piece_index(arr)
        out = np.empty(arr.shape, dtype=float)
        for j, piece in enumerate(self.pieces):
            mask = idx == j
            if np.any(mask):
                out[mask] = piece.value(self.model, arr[mask])
        return float(out) if np.ndim(m) == 0 else out

    def accuracy(self, m):
        out = np.asarray(self.unclipped(m))
        if self.band:
            arr = np.asarray(m, dtype=float)
            out = np.minimum(np.maximum(out, self.model.eval(arr)), self.model.eval(arr + self.delta_others))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if np.ndim(m) == 0 else out

    def candidate_points(self, cost: float, upper: float) -> np.ndarray:
        """Points that contain every maximizer of ``accuracy(m) - cost*m`` on ``[0, upper]``.

        Between consecutive candidates the utility follows a single smooth
        branch (a line or a shifted accuracy curve) with no interior
        stationary point.
        """
        model = self.model
        stationary = model.inverse_slope(cost)
        shifts = {0.0, float(self.delta_others)} if self.band else set()
        pts = {0.0, upper}
        for piece in self.pieces:
            lo, hi = piece.lo, min(piece.hi, upper)
            if lo > upper or hi < lo:
                continue
            pts.update((lo, hi))
            branch_shifts = shifts | {piece.shift} if piece.kind == "curve" else set(shifts)
            if stationary is not INFINITE:
                for sh in branch_shifts:
                    x = stationary - sh
                    if lo < x < hi:
                        pts.add(x)
            if piece.kind == "line":
                for sh in shifts:
                    pts.update(_line_curve_crossings(model, piece, sh, lo, hi))
        return np.array(sorted(pts))


def _line_curve_crossings(model, piece, shift, lo, hi):
    """Roots of ``a(x + shift) = line(x)`` on ``[lo, hi]``."""

    def h(x):
        return float(model.eval(x + shift)) - float(piece.value(model, x))

    roots = []
    z = min(max(model.min_viable_dataset - shift, lo), hi)
    # a(x + shift) == 0 on [lo, z]: the line itself must vanish
    if piece.slope != 0 and z > lo:
        x = piece.anchor_m - piece.anchor_acc / piece.slope
        if lo <= x <= z:
            roots.append(x)
    # concave branch on [z, hi]
    if hi > z:
        peak = model.inverse_slope(piece.slope) if piece.slope > 0 else INFINITE
        peak = hi if peak is INFINITE else min(max(peak - shift, z), hi)
        hp = h(peak)
        if hp >= 0:
            for a, b in ((z, peak), (peak, hi)):
                if b > a and h(a) * h(b) < 0:
                    roots.append(optimize.brentq(h, a, b, xtol=1e-300, rtol=ROOT_RTOL, maxiter=2000))
    return roots


def _pooled_schedule(model, delta_others):
    return Schedule(model, delta_others, (Piece(0.0, math.inf, "curve", shift=delta_others),))


# ---------------------------------------------------------------------------
# breakpoint solvers


def solve_m_max(model: AccuracyModel, cost: float, epsilon: float, m_star: float, delta_others: float) -> float:
    """Largest ``m >= m_star`` where the incentive line meets the pooled curve.

    Solves ``a(m + delta) = a(m_star) + (cost + epsilon) (m - m_star)``.
    Returns ``m_star`` when no larger root exists.
    """
    if delta_others <= 0:
        return float(m_star)
    rate = cost + epsilon
    base = float(model.eval(m_star))

    def gap(m):
        return float(model.eval(m + delta_others)) - base - rate * (m - m_star)

    # eval(m + delta) = b(m + delta) > 0 and concave beyond m0, so gap is
    # concave on [region_lo, inf)
    region_lo = max(m_star, model.min_viable_dataset - delta_others, 0.0)
    peak = model.inverse_slope(rate)
    peak = region_lo if peak is INFINITE else max(region_lo, peak - delta_others)
    if gap(peak) < 0:
        return float(m_star)
    hi = max(2.0 * peak, peak + 1.0)
    while gap(hi) >= 0:
        hi = 2.0 * hi
    return optimize.brentq(gap, peak, hi, xtol=1e-300, rtol=ROOT_RTOL, maxiter=2000)


@dataclass(frozen=True)
class ShapingScheduleKnown:
    m_star: float
    m_max: float
    delta_others: float


@dataclass(frozen=True)
class ShapingScheduleTwoType:
    m_star_high: float
    m_star_low: float
    m_up: float
    m_down: float
    m_max_high: float
    m_max_low: float
    delta_others: float
    target_slope: float


def solve_two_type_schedule(
    model: AccuracyModel,
    c_low: float,
    c_high: float,
    p: float,
    epsilon: float,
    delta_others: float,
) -> ShapingScheduleTwoType:
    """Contract points for the unknown-cost (two-type) mechanism.

    ``m_down`` is placed where the pooled slope hits
    ``c_low - p/(1-p) c_high``, clamped into ``[m_max_high, m_max_low]``;
    ``m_up`` is where the high-cost line from ``m_star_high`` meets the
    low-cost line through ``m_down``.
    """
    if not 0 < c_low <= c_high:
        raise ParameterError(f"need 0 < c_low <= c_high, got {c_low}, {c_high}")
    if not 0 <= p <= 1:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    ms_high = _m_star(model, float(c_high))
    ms_low = _m_star(model, float(c_low))
    mx_high = solve_m_max(model, c_high, epsilon, ms_high, delta_others)
    mx_low = solve_m_max(model, c_low, epsilon, ms_low, delta_others)
    target = -math.inf if p >= 1 else c_low - p / (1.0 - p) * c_high
    point = model.inverse_slope(target)
    if point is INFINITE:
        m_down = mx_low
    else:
        m_down = min(max(point - delta_others, mx_high), mx_low)
    if c_high == c_low:
        m_up = m_down
    else:
        num = (
            float(model.eval(m_down + delta_others))
            - (c_low + epsilon) * m_down
            - float(model.eval(ms_high))
            + (c_high + epsilon) * ms_high
        )
        m_up = min(max(num / (c_high - c_low), ms_high), m_down)
    return ShapingScheduleTwoType(ms_high, ms_low, m_up, m_down, mx_high, mx_low, delta_others, target)


def crossing_residual(model: AccuracyModel, c_low, c_high, epsilon, sched: ShapingScheduleTwoType) -> float:
    """Mismatch between the two incentive lines at ``m_up``."""
    left = float(model.eval(sched.m_down + sched.delta_others)) - (c_low + epsilon) * (sched.m_down - sched.m_up)
    right = float(model.eval(sched.m_star_high)) + (c_high + epsilon) * (sched.m_up - sched.m_star_high)
    return abs(left - right)


# ---------------------------------------------------------------------------
# mechanisms


class Mechanism:
    """Interface: ``schedule`` builds agent ``i``'s accuracy curve."""

    name = "mechanism"

    def schedule(self, model: AccuracyModel, pop: Population, i: int, delta_others: float) -> Schedule:
        raise NotImplementedError

    def group_key(self, pop: Population, i: int):
        """Agents with equal keys get equal schedules for equal ``delta_others``."""
        return (float(pop.costs[i]),)

    def validate(self, pop: Population) -> None:
        pass


@dataclass(frozen=True)
class StandardFederated(Mechanism):
    """Everyone receives the model trained on all pooled data."""

    name = "standard"

    def schedule(self, model, pop, i, delta_others):
        return _pooled_schedule(model, float(delta_others))

    def group_key(self, pop, i):
        return ()


def _check_epsilon(epsilon):
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be positive and finite, got {epsilon}")


def _warn_large_epsilon(epsilon, pop):
    if epsilon > 0.01 * float(pop.costs.min()):
        warnings.warn(
            f"epsilon={epsilon:g} is not small relative to the cheapest cost {pop.costs.min():g}",
            stacklevel=3,
        )


@dataclass(frozen=True)
class ShapingKnown(Mechanism):
    """Accuracy shaping with verifiable costs."""

    epsilon: float = DEFAULT_EPSILON
    name = "shaping"

    def __post_init__(self):
        _check_epsilon(self.epsilon)

    def validate(self, pop):
        _warn_large_epsilon(self.epsilon, pop)

    def breakpoints(self, model, cost, delta_others) -> ShapingScheduleKnown:
        m_star = _m_star(model, float(cost))
        m_max = solve_m_max(model, cost, self.epsilon, m_star, delta_others)
        return ShapingScheduleKnown(m_star, m_max, float(delta_others))

    def schedule(self, model, pop, i, delta_others):
        cost = float(pop.costs[i])
        bp = self.breakpoints(model, cost, delta_others)
        rate = cost + self.epsilon
        return Schedule(
            model,
            float(delta_others),
            (
                Piece(0.0, bp.m_star, "curve"),
                Piece(bp.m_star, bp.m_max, "line", anchor_m=bp.m_star,
                      anchor_acc=float(model.eval(bp.m_star)), slope=rate),
                Piece(bp.m_max, math.inf, "curve", shift=float(delta_others)),
            ),
            # an unviable agent's line starts at zero and can overshoot the
            # pooled curve while that is still zero; the band caps it
            band=True,
        )


@dataclass(frozen=True)
class ShapingTwoType(Mechanism):
    """Accuracy shaping when each cost is only known to be low or high.

    ``band=True`` (default) clips the curve into ``[a(m_i), a(sum m)]``. The
    raw four-piece curve can exceed the pooled accuracy when the others
    contribute little, and can dip below own-data accuracy by O(epsilon**2)
    just left of the low-cost optimum. ``band=False`` gives the raw curve.
    """

    epsilon: float = DEFAULT_EPSILON
    band: bool = True
    name = "shaping2t"

    def __post_init__(self):
        _check_epsilon(self.epsilon)

    def validate(self, pop):
        if pop.prior is None:
            raise ParameterError("the two-type mechanism needs a population with a TwoTypePrior")
        _warn_large_epsilon(self.epsilon, pop)

    def group_key(self, pop, i):
        return (float(pop.costs[i]), pop.prior.p[i])

    def breakpoints(self, model, pop, i, delta_others) -> ShapingScheduleTwoType:
        prior = pop.prior
        if prior is None:
            raise ParameterError("the two-type mechanism needs a population with a TwoTypePrior")
        return solve_two_type_schedule(model, prior.c_low, prior.c_high, prior.p[i], self.epsilon, delta_others)

    def schedule(self, model, pop, i, delta_others):
        prior = pop.prior
        bp = self.breakpoints(model, pop, i, delta_others)
        eps = self.epsilon
        return Schedule(
            model,
            float(delta_others),
            (
                Piece(0.0, bp.m_star_high, "curve"),
                Piece(bp.m_star_high, bp.m_up, "line", anchor_m=bp.m_star_high,
                      anchor_acc=float(model.eval(bp.m_star_high)), slope=prior.c_high + eps),
                Piece(bp.m_up, bp.m_down, "line", anchor_m=bp.m_down,
                      anchor_acc=float(model.eval(bp.m_down + delta_others)), slope=prior.c_low + eps),
                Piece(bp.m_down, math.inf, "curve", shift=float(delta_others)),
            ),
            band=self.band,
        )


# ---------------------------------------------------------------------------
# profile-level operations


class CheckResult(NamedTuple):
    ok: bool
    violation: float


def _profile(profile) -> np.ndarray:
    m = np.asarray(profile, dtype=float)
    if m.ndim != 1:
        raise ParameterError("profile must be a 1-d vector")
    if np.any(m < 0) or np.any(np.isnan(m)):
        raise ParameterError(f"contributions must be non-negative, got {profile!r}")
    return m


def _schedules(mech, model, pop, m):
    total = float(m.sum())
    cache = {}
    out = []
    for i in range(len(m)):
        delta = total - m[i]
        key = (mech.group_key(pop, i), delta)
        if key not in cache:
            cache[key] = mech.schedule(model, pop, i, delta)
        out.append(cache[key])
    return out


def allocate(mech: Mechanism, model: AccuracyModel, pop: Population, profile) -> np.ndarray:
    """Per-agent accuracies for a contribution profile."""
    m = _profile(profile)
    if len(m) != pop.n:
        raise ParameterError(f"profile has {len(m)} entries for {pop.n} agents")
    scheds = _schedules(mech, model, pop, m)
    return np.array([s.accuracy(mi) for s, mi in zip(scheds, m)])


def check_feasible(mech, model, pop, profile) -> CheckResult:
    """No agent gets more accuracy than the pooled data supports."""
    m = _profile(profile)
    excess = allocate(mech, model, pop, m) - model.eval(float(m.sum()))
    worst = max(0.0, float(excess.max()))
    return CheckResult(worst <= FEASIBILITY_TOL, worst)


def check_ir(mech, model, pop, profile) -> CheckResult:
    """No agent does worse than training alone on its own data."""
    m = _profile(profile)
    shortfall = model.eval(m) - allocate(mech, model, pop, m)
    worst = max(0.0, float(shortfall.max()))
    return CheckResult(worst <= IR_TOL, worst)


def allocation_trace(mech, model, pop, profile) -> list:
    """Rows ``(agent_id, m_i, piece_index, accuracy)`` for a profile."""
    m = _profile(profile)
    scheds = _schedules(mech, model, pop, m)
    return [
        (i, float(mi), int(s.piece_index(mi)), float(s.accuracy(mi)))
        for i, (s, mi) in enumerate(zip(scheds, m))
    ]


def write_allocation_trace(path, rows: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent_id", "m_i", "piece_index", "accuracy"])
        for agent_id, mi, piece, acc in rows:
            writer.writerow([agent_id, f"{mi:.12g}", piece, f"{acc:.12g}"])


_MECHS = {"standard": StandardFederated, "shaping": ShapingKnown, "shaping2t": ShapingTwoType}


def mechanism_from_config(section: Mapping) -> Mechanism:
    """Build a mechanism from a ``mechanism`` config section."""
    kind = str(section.get("kind", "shaping")).lower()
    if kind not in _MECHS:
        raise ParameterError(f"unknown mechanism.kind {kind!r}; expected one of {sorted(_MECHS)}")
    if kind == "standard":
        return StandardFederated()
    try:
        epsilon = float(section.get("epsilon", DEFAULT_EPSILON))
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"mechanism.epsilon is not a number: {section['epsilon']!r}") from exc
    return _MECHS[kind](epsilon=epsilon)
