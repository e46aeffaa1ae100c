"""Agents, their utilities, and the stand-alone optimal data amount."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from .accuracy import INFINITE, AccuracyModel
from .errors import ParameterError

__all__ = [
    "Agent",
    "TwoTypePrior",
    "Population",
    "utility",
    "individual_optimum",
    "individual_utility",
    "viability_threshold",
    "population_from_config",
]


@dataclass(frozen=True)
class Agent:
    cost: float

    def __post_init__(self):
        if not (self.cost > 0 and math.isfinite(self.cost)):
            raise ParameterError(f"agent cost must be positive and finite, got {self.cost}")


@dataclass(frozen=True)
class TwoTypePrior:
    """Server-side belief for unverifiable costs.

    Agent ``i`` has cost ``c_low`` with probability ``p[i]``, else ``c_high``.
    """

    c_low: float
    c_high: float
    p: tuple

    def __post_init__(self):
        if not (0 < self.c_low <= self.c_high and math.isfinite(self.c_high)):
            raise ParameterError(f"need 0 < c_low <= c_high, got {self.c_low}, {self.c_high}")
        p = tuple(float(x) for x in self.p)
        if any(not 0 <= x <= 1 for x in p):
            raise ParameterError(f"type priors must lie in [0, 1], got {p}")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class Population:
    """Ordered agents; the index in ``agents`` is the agent id.

    ``prior`` is only needed by the two-type mechanism. When it is present,
    every agent's realized cost must be ``c_low`` or ``c_high``.
    """

    agents: tuple
    prior: TwoTypePrior | None = None
    _costs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        agents = tuple(a if isinstance(a, Agent) else Agent(float(a)) for a in self.agents)
        if not agents:
            raise ParameterError("population needs at least one agent")
        object.__setattr__(self, "agents", agents)
        costs = np.array([a.cost for a in agents], dtype=float)
        costs.flags.writeable = False
        object.__setattr__(self, "_costs", costs)
        if self.prior is not None:
            if len(self.prior.p) != len(agents):
                raise ParameterError(
                    f"prior has {len(self.prior.p)} entries for {len(agents)} agents"
                )
            ok = np.isclose(costs, self.prior.c_low, rtol=0, atol=0) | np.isclose(
                costs, self.prior.c_high, rtol=0, atol=0
            )
            if not ok.all():
                raise ParameterError("two-type population costs must equal c_low or c_high")

    @classmethod
    def from_costs(cls, costs: Sequence[float], prior: TwoTypePrior | None = None) -> "Population":
        return cls(tuple(Agent(float(c)) for c in costs), prior)

    @classmethod
    def sample_two_type(cls, c_low, c_high, p, rng: np.random.Generator) -> "Population":
        """Draw realized costs from the prior; ``p`` is one prior per agent."""
        p = np.asarray(p, dtype=float)
        low = rng.random(p.shape) < p
        costs = np.where(low, c_low, c_high)
        return cls.from_costs(costs, TwoTypePrior(c_low, c_high, tuple(p)))

    @property
    def costs(self) -> np.ndarray:
        return self._costs

    @property
    def n(self) -> int:
        return len(self.agents)

    def __len__(self):
        return len(self.agents)


def utility(model: AccuracyModel, agent: Agent | float, m):
    """Stand-alone utility ``a(m) - c m``."""
    cost = agent.cost if isinstance(agent, Agent) else float(agent)
    if np.ndim(m):
        m = np.asarray(m, dtype=float)
    return model.eval(m) - cost * m


def individual_optimum(model: AccuracyModel, agent: Agent | float) -> float:
    """Data an agent collects on its own.

    The stationary point of ``b(m) - c m`` if it yields strictly positive
    utility, otherwise 0 (ties at zero utility resolve to 0).
    """
    cost = agent.cost if isinstance(agent, Agent) else float(agent)
    m = model.inverse_slope(cost)
    if m is INFINITE:
        return 0.0
    if utility(model, cost, m) <= 0:
        return 0.0
    return float(m)


def individual_utility(model: AccuracyModel, agent: Agent | float) -> float:
    """Utility at :func:`individual_optimum`."""
    return float(utility(model, agent, individual_optimum(model, agent)))


def _stationary_utility(model, c):
    m = model.inverse_slope(c)
    if m is INFINITE:
        return -math.inf
    return float(model.eval(m) - c * m)


def viability_threshold(model: AccuracyModel) -> float:
    """Largest cost at which an individual agent still collects data.

    Solved as the root in ``c`` of the utility at the stationary point, which
    decreases in ``c``.
    """
    m0 = model.min_viable_dataset
    hi = float(model.slope(max(m0, np.nextafter(model.domain_lower, np.inf), 1e-300)))
    if not math.isfinite(hi):
        hi = 1e300
    lo = hi
    while _stationary_utility(model, lo) <= 0:
        lo *= 0.5
        if lo < 1e-300:
            return 0.0
    while _stationary_utility(model, hi) > 0:
        hi *= 2.0
    return optimize.bisect(
        lambda c: _stationary_utility(model, c), lo, hi, xtol=1e-300, rtol=1e-12, maxiter=500
    )


def _loguniform_costs(spec: Mapping) -> np.ndarray:
    rng = np.random.default_rng(int(spec.get("seed", 42)))
    low, high, n = float(spec["low"]), float(spec["high"]), int(spec["n"])
    if not 0 < low <= high:
        raise ParameterError(f"loguniform costs need 0 < low <= high, got {low}, {high}")
    return np.exp(rng.uniform(math.log(low), math.log(high), size=n))


def population_from_config(section: Mapping, seed: int = 42) -> Population:
    """Build a population from a ``population`` config section.

    Accepted shapes::

        costs = [0.01, 0.02]
        costs = {kind = "loguniform", low = 0.01, high = 0.1, n = 5, seed = 1}
        cost = 0.1, n = 10000          # identical agents
        two_type = {c_low = 0.005, c_high = 0.01, p = 0.5, n = 4}
    """
    if "two_type" in section:
        tt = section["two_type"]
        n = int(tt.get("n", section.get("n", 2)))
        p = tt["p"]
        p = [float(p)] * n if np.ndim(p) == 0 else [float(x) for x in p]
        rng = np.random.default_rng(int(tt.get("seed", seed)))
        return Population.sample_two_type(float(tt["c_low"]), float(tt["c_high"]), p, rng)
    costs = section.get("costs")
    if costs is None:
        if "cost" not in section:
            raise ParameterError("population section needs 'costs', 'cost' or 'two_type'")
        costs = [float(section["cost"])] * int(section.get("n", 1))
    elif isinstance(costs, Mapping):
        kind = str(costs.get("kind", "loguniform"))
        if kind != "loguniform":
            raise ParameterError(f"unknown cost generator {kind!r}")
        costs = _loguniform_costs(costs)
    try:
        return Population.from_costs([float(c) for c in costs])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad population costs: {costs!r}") from exc
