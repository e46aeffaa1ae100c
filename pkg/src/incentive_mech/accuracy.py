"""Parametric accuracy curves ``a(m) = max(0, b(m))``.

Three families are provided:

* :class:`SimpleBound`  ``b(m) = a_opt - 2 sqrt(k/m)``
* :class:`FullBound`    ``b(m) = a_opt - (sqrt(2k(2 + log(m/k))) + 4) / sqrt(m)``
* :class:`PowerLaw`     ``b(m) = 1 - beta / m**alpha - tau``

Dataset sizes are continuous reals. Every model exposes the un-clamped curve
(:meth:`AccuracyModel.raw`), its analytic slope, the inverse of the slope, and
the minimum viable dataset size ``m0`` below which accuracy is zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy import optimize

from .errors import DomainError, ParameterError

__all__ = [
    "INFINITE",
    "Infinite",
    "AccuracyModel",
    "SimpleBound",
    "FullBound",
    "PowerLaw",
    "model_from_config",
]

INVERSE_RTOL = 1e-10
INVERSE_MAXITER = 200
_BRACKET_LIMIT = 1e250


class Infinite(enum.Enum):
    """Sentinel for "no finite dataset size" (e.g. a non-positive slope target)."""

    INFINITE = "infinite"

    def __repr__(self):
        return "INFINITE"


INFINITE = Infinite.INFINITE


def _scalar_or_array(values, like):
    if np.ndim(like) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class AccuracyModel:
    """Base class. Subclasses implement ``_raw``, ``_slope`` and ``limit``.

    ``domain_lower`` is the left end of the region where ``raw`` is concave and
    non-decreasing. ``closed_domain`` tells whether that endpoint itself
    belongs to the domain (FullBound) or is an open limit at zero.
    """

    closed_domain = False

    @property
    def domain_lower(self) -> float:
        return 0.0

    @property
    def limit(self) -> float:
        raise NotImplementedError

    def _raw(self, m):
        raise NotImplementedError

    def _slope(self, m):
        raise NotImplementedError

    def _in_domain(self, m):
        if self.closed_domain:
            return m >= self.domain_lower
        return m > self.domain_lower

    def raw(self, m):
        """Un-clamped ``b(m)``; may be negative. Raises outside the domain."""
        arr = np.asarray(m, dtype=float)
        if not np.all(self._in_domain(arr)):
            raise DomainError(
                f"{type(self).__name__}.raw needs m in its domain "
                f"({'[' if self.closed_domain else '('}{self.domain_lower:g}, inf), got {m!r}"
            )
        return _scalar_or_array(self._raw(arr), m)

    def eval(self, m):
        """Accuracy ``max(0, b(m))`` in [0, 1]; zero outside the domain."""
        if type(m) is float or type(m) is int or type(m) is np.float64:
            if not m >= 0:
                raise DomainError(f"dataset size must be >= 0, got {m!r}")
            if m < self.domain_lower or (m == self.domain_lower and not self.closed_domain):
                return 0.0
            return max(float(self._raw(float(m))), 0.0)
        arr = np.asarray(m, dtype=float)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError(f"dataset size must be >= 0, got {m!r}")
        inside = self._in_domain(arr)
        safe = np.where(inside, arr, max(self.domain_lower, 1.0) + 1.0)
        out = np.where(inside, np.maximum(self._raw(safe), 0.0), 0.0)
        return _scalar_or_array(out, m)

    def slope(self, m):
        """Analytic derivative ``b'(m)``."""
        arr = np.asarray(m, dtype=float)
        if np.any(arr <= 0) or not np.all(self._in_domain(arr)):
            raise DomainError(f"slope undefined at m={m!r}")
        return _scalar_or_array(self._slope(arr), m)

    @cached_property
    def min_viable_dataset(self) -> float:
        """Largest ``m`` with zero accuracy, i.e. the root of ``raw(m) = 0``."""
        lo = self.domain_lower
        if self.closed_domain:
            if self._raw(lo) >= 0:
                return lo
        else:
            lo = 1.0
            while self._raw(lo) >= 0:
                lo *= 0.5
                if lo < 1e-300:
                    return self.domain_lower
        hi = max(2.0 * lo, 1.0)
        while self._raw(hi) <= 0:
            hi *= 2.0
            if hi > _BRACKET_LIMIT:
                raise ParameterError(f"{self!r} never becomes positive")
        return optimize.bisect(
            lambda x: float(self._raw(x)), lo, hi, xtol=1e-300, rtol=1e-14, maxiter=2000
        )

    def inverse_slope(self, s):
        """Dataset size where the slope equals ``s``.

        Returns the domain's lower endpoint when ``s`` exceeds every slope on
        the domain, and :data:`INFINITE` when the slope never gets down to
        ``s`` (in particular for ``s <= 0``).
        """
        if not s > 0:
            return INFINITE
        if math.isinf(s):
            return self.domain_lower
        m0 = self.min_viable_dataset
        lo = m0 if m0 > 0 else 1.0
        hi = 2.0 * lo
        if self.closed_domain:
            lo = max(lo, self.domain_lower)
            if self._slope(self.domain_lower) <= s:
                return self.domain_lower
        while self._slope(lo) < s:
            lo *= 0.5
            if self.closed_domain and lo <= self.domain_lower:
                lo = self.domain_lower
                break
            if lo < 1e-300:
                return self.domain_lower
        while self._slope(hi) > s:
            hi *= 2.0
            if hi > _BRACKET_LIMIT:
                return INFINITE
        if hi < lo:
            hi = 2.0 * lo
        return optimize.bisect(
            lambda x: float(self._slope(x)) - s,
            lo,
            hi,
            xtol=1e-300,
            rtol=INVERSE_RTOL,
            maxiter=INVERSE_MAXITER,
        )

    def to_config(self) -> dict:
        raise NotImplementedError


def _check_a_opt_k(a_opt, k):
    if not 0 < a_opt <= 1:
        raise ParameterError(f"a_opt must lie in (0, 1], got {a_opt}")
    if not k >= 1 or math.isinf(k):
        raise ParameterError(f"k must be a finite number >= 1, got {k}")


@dataclass(frozen=True)
class SimpleBound(AccuracyModel):
    a_opt: float = 0.95
    k: float = 1.0

    def __post_init__(self):
        _check_a_opt_k(self.a_opt, self.k)

    @property
    def limit(self):
        return self.a_opt

    def _raw(self, m):
        return self.a_opt - 2.0 * np.sqrt(self.k / m)

    def _slope(self, m):
        return math.sqrt(self.k) * m ** -1.5

    def to_config(self):
        return {"kind": "simple", "a_opt": self.a_opt, "k": self.k}


@dataclass(frozen=True)
class FullBound(AccuracyModel):
    """Generalization bound with pseudo-dimension ``k``.

    The curve is concave and increasing on ``[max(1, k), inf)``; below that
    it is negative anyway, so :meth:`eval` returns 0 there.
    """

    a_opt: float = 0.95
    k: float = 1.0
    closed_domain = True

    def __post_init__(self):
        _check_a_opt_k(self.a_opt, self.k)

    @property
    def domain_lower(self):
        return max(1.0, float(self.k))

    @property
    def limit(self):
        return self.a_opt

    def _raw(self, m):
        return self.a_opt - (np.sqrt(2.0 * self.k * (2.0 + np.log(m / self.k))) + 4.0) / np.sqrt(m)

    def _slope(self, m):
        log_term = 2.0 + np.log(m / self.k)
        s = np.sqrt(2.0 * self.k * log_term)
        return (2.0 * self.k * (log_term - 1.0) + 4.0 * s) / (2.0 * s) * m ** -1.5

    def to_config(self):
        return {"kind": "full", "a_opt": self.a_opt, "k": self.k}


@dataclass(frozen=True)
class PowerLaw(AccuracyModel):
    """Power-law accuracy shifted down by a regulatory threshold ``tau``."""

    beta: float = 1.0
    alpha: float = 0.5
    tau: float = 0.0

    def __post_init__(self):
        if not self.beta > 0 or math.isinf(self.beta):
            raise ParameterError(f"beta must be positive and finite, got {self.beta}")
        if not 0 < self.alpha <= 1:
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 <= self.tau < 1:
            raise ParameterError(f"tau must lie in [0, 1), got {self.tau}")

    @property
    def limit(self):
        return 1.0 - self.tau

    def _raw(self, m):
        return 1.0 - self.beta * m ** -self.alpha - self.tau

    def _slope(self, m):
        return self.alpha * self.beta * m ** (-self.alpha - 1.0)

    def to_config(self):
        return {"kind": "powerlaw", "beta": self.beta, "alpha": self.alpha, "tau": self.tau}


_KINDS = {"simple": SimpleBound, "full": FullBound, "powerlaw": PowerLaw}
_FIELDS = {"simple": ("a_opt", "k"), "full": ("a_opt", "k"), "powerlaw": ("beta", "alpha", "tau")}


def model_from_config(section: Mapping) -> AccuracyModel:
    """Build a model from an ``accuracy`` config section."""
    kind = str(section.get("kind", "simple")).lower()
    if kind not in _KINDS:
        raise ParameterError(f"unknown accuracy.kind {kind!r}; expected one of {sorted(_KINDS)}")
    kwargs = {}
    for name in _FIELDS[kind]:
        if name in section:
            try:
                kwargs[name] = float(section[name])
            except (TypeError, ValueError) as exc:
                raise ParameterError(f"accuracy.{name} is not a number: {section[name]!r}") from exc
    return _KINDS[kind](**kwargs)
