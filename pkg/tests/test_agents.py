import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from incentive_mech.accuracy import FullBound, PowerLaw, SimpleBound
from incentive_mech.agents import (
    Agent,
    Population,
    TwoTypePrior,
    individual_optimum,
    individual_utility,
    population_from_config,
    utility,
    viability_threshold,
)
from incentive_mech.errors import ParameterError
from incentive_mech.verify import random_model


def grid_max_utility(model, cost, points=10_000):
    xs = np.linspace(0.0, 1.0 / cost, points)
    us = model.eval(xs) - cost * xs
    return xs[np.argmax(us)], us.max()


class TestUtility:
    def test_zero_data(self):
        assert utility(FullBound(), 0.3, 0.0) == 0.0

    def test_direct(self):
        assert utility(SimpleBound(0.95, 1), Agent(0.01), 100.0) == pytest.approx(-0.25, abs=1e-14)

    def test_at_optimum(self):
        m = 0.01 ** (-2 / 3)
        assert utility(SimpleBound(0.95, 1), 0.01, m) == pytest.approx(0.95 - 3 * 0.01 ** (1 / 3), abs=1e-12)
        assert utility(SimpleBound(0.95, 1), 0.01, m) == pytest.approx(0.30367, abs=1e-5)


class TestIndividualOptimum:
    def test_closed_form(self):
        assert individual_optimum(SimpleBound(0.95, 1), 0.01) == pytest.approx(10 ** (4 / 3), rel=1e-9)

    def test_not_viable(self):
        model = SimpleBound(0.95, 1)
        assert individual_optimum(model, 0.1) == 0.0
        _, best = grid_max_utility(model, 0.1, points=int(1 / 0.1 / 1e-3) + 1)
        assert best <= 0.0

    def test_cost_above_every_slope(self):
        assert individual_optimum(PowerLaw(1.0, 0.5, 0.0), 1e3) == 0.0

    def test_tie_at_zero_utility_prefers_zero(self):
        model = SimpleBound(0.95, 1)
        c = viability_threshold(model)
        assert individual_optimum(model, c * (1 + 1e-9)) == 0.0

    def test_agent_validation(self):
        for bad in (0.0, -1.0, math.inf, math.nan):
            with pytest.raises(ParameterError):
                Agent(bad)

    def test_optimality_against_grid(self, rng):
        worst = 0.0
        for _ in range(1000):
            model = random_model(rng)
            c = viability_threshold(model) * math.exp(rng.uniform(-3, 1))
            m = individual_optimum(model, c)
            xs = np.linspace(0.0, 1.0 / c, 10_000)
            gap = float(np.max(model.eval(xs) - c * xs)) - float(utility(model, c, m))
            worst = max(worst, gap)
        assert worst <= 1e-6

    @given(st.floats(1.0, 20.0), st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
    def test_cost_monotonicity(self, k, u, v):
        model = SimpleBound(0.9, k)
        vt = viability_threshold(model)
        ci, cj = sorted((vt * 2 * u, vt * 2 * v))
        assert individual_optimum(model, ci) >= individual_optimum(model, cj)
        assert individual_utility(model, ci) >= individual_utility(model, cj) - 1e-15

    def test_positive_optimum_above_m0(self, rng):
        for _ in range(200):
            model = random_model(rng)
            vt = viability_threshold(model)
            c = vt * math.exp(rng.uniform(-4, 1))
            m = individual_optimum(model, c)
            if c > vt * (1 + 1e-9):
                assert m == 0.0
            if m > 0:
                assert m >= model.min_viable_dataset


class TestViabilityThreshold:
    def test_closed_form(self):
        assert viability_threshold(SimpleBound(0.95, 1)) == pytest.approx(0.95**3 / 27, rel=1e-9)
        assert viability_threshold(SimpleBound(0.95, 1)) == pytest.approx(0.031755, rel=1e-4)

    def test_scales_with_k(self):
        assert viability_threshold(SimpleBound(0.95, 8)) == pytest.approx(0.95**3 / 216, rel=1e-9)

    def test_vanishes_with_accuracy(self):
        assert viability_threshold(SimpleBound(1e-6, 1)) < 1e-17

    def test_against_grid_oracle(self):
        model = FullBound(0.95, 1)
        c = viability_threshold(model)
        assert grid_max_utility(model, c * 0.99, 200_000)[1] > 0
        assert grid_max_utility(model, c * 1.01, 200_000)[1] <= 0


class TestPopulation:
    def test_costs_read_only(self):
        pop = Population.from_costs([0.1, 0.2])
        assert pop.n == 2
        with pytest.raises(ValueError):
            pop.costs[0] = 1.0

    def test_empty(self):
        with pytest.raises(ParameterError):
            Population(())

    def test_prior_validation(self):
        with pytest.raises(ParameterError):
            TwoTypePrior(0.2, 0.1, (0.5,))
        with pytest.raises(ParameterError):
            TwoTypePrior(0.1, 0.2, (1.5,))
        with pytest.raises(ParameterError):
            Population.from_costs([0.1, 0.3], TwoTypePrior(0.1, 0.2, (0.5, 0.5)))
        with pytest.raises(ParameterError):
            Population.from_costs([0.1], TwoTypePrior(0.1, 0.2, (0.5, 0.5)))

    def test_sample_two_type_reproducible(self):
        a = Population.sample_two_type(0.1, 0.2, [0.5] * 20, np.random.default_rng(1))
        b = Population.sample_two_type(0.1, 0.2, [0.5] * 20, np.random.default_rng(1))
        np.testing.assert_array_equal(a.costs, b.costs)
        assert set(a.costs) <= {0.1, 0.2}

    def test_sample_extremes(self):
        pop = Population.sample_two_type(0.1, 0.2, [1.0, 0.0], np.random.default_rng(0))
        np.testing.assert_array_equal(pop.costs, [0.1, 0.2])


class TestPopulationConfig:
    def test_costs_list(self):
        assert list(population_from_config({"costs": [0.1, 0.2]}).costs) == [0.1, 0.2]

    def test_identical(self):
        pop = population_from_config({"cost": 0.1, "n": 5})
        assert pop.n == 5 and set(pop.costs) == {0.1}

    def test_loguniform(self):
        spec = {"costs": {"kind": "loguniform", "low": 0.01, "high": 0.1, "n": 50, "seed": 3}}
        a, b = population_from_config(spec), population_from_config(spec)
        np.testing.assert_array_equal(a.costs, b.costs)
        assert a.costs.min() >= 0.01 and a.costs.max() <= 0.1

    def test_two_type(self):
        pop = population_from_config({"two_type": {"c_low": 0.1, "c_high": 0.2, "p": 0.3, "n": 4}})
        assert pop.prior.p == (0.3,) * 4

    @pytest.mark.parametrize(
        "section",
        [{}, {"costs": ["x"]}, {"costs": [-1.0]}, {"costs": {"kind": "normal", "n": 2}}],
    )
    def test_invalid(self, section):
        with pytest.raises(ParameterError):
            population_from_config(section)
