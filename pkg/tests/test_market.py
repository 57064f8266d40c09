import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedonic.errors import (
    AllInfeasibleRowWarning,
    ConstraintViolation,
    DimensionMismatch,
    InfeasibleMass,
    NegativeMass,
    ValidationError,
)
from hedonic.market import (
    Allocation,
    IndirectUtilities,
    MarketSpec,
    indirect_surplus_matrix,
    price_bounds,
    validate_market,
    verify_equilibrium,
    welfare,
    worked_example,
)

from conftest import brute_force_welfare


def tiny(alpha, gamma, n=(1,), m=(1,), **kw):
    alpha = np.atleast_2d(alpha)
    gamma = np.atleast_2d(gamma)
    nx, nz = alpha.shape
    ny = gamma.shape[1]
    return MarketSpec(
        [f"x{i}" for i in range(nx)], [f"y{j}" for j in range(ny)], [f"z{k}" for k in range(nz)],
        n, m, alpha, gamma, **kw,
    )


# the optimal assignment x1-z2-y2 (9), x2-z3-y1 (8), x3-z3-y3 (14); x4 opts out
OPTIMAL = Allocation(
    [[0, 1, 0], [0, 0, 1], [0, 0, 1], [0, 0, 0]],
    [[0, 0, 0], [0, 1, 0], [1, 0, 1]],
)


class TestValidation:
    def test_worked_example_shape(self, example):
        assert example.shape == (4, 3, 3)
        assert example.integral and example.exact

    def test_arrays_are_read_only(self, example):
        with pytest.raises(ValueError):
            example.alpha[0, 0] = 9

    @pytest.mark.parametrize(
        "change, error",
        [
            ({"n": [1, 1, 1]}, DimensionMismatch),
            ({"m": [1, 1]}, DimensionMismatch),
            ({"alpha": np.zeros((4, 2))}, DimensionMismatch),
            ({"gamma": np.zeros((3, 2))}, DimensionMismatch),
            ({"n": [1, -1, 1, 1]}, NegativeMass),
            ({"m": [1, 1, -0.5]}, NegativeMass),
            ({"alpha": np.full((4, 3), np.nan)}, ValidationError),
            ({"gamma": np.full((3, 3), np.inf)}, ValidationError),
            ({"qualities": ("z", "z", "w")}, ValidationError),
        ],
    )
    def test_rejects_malformed(self, example, change, error):
        with pytest.raises(error):
            example.replace(**change)

    def test_all_forbidden_row_warns_but_is_legal(self, example):
        alpha = example.alpha.copy()
        alpha[1] = -np.inf
        spec = example.replace(alpha=alpha)
        with pytest.warns(AllInfeasibleRowWarning):
            validate_market(spec)

    def test_zero_mass_is_allowed(self, example):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            example.replace(n=[0, 1, 1, 1])


class TestIndirectSurplus:
    def test_first_row_of_example(self, example):
        phi, argmax = indirect_surplus_matrix(example)
        # x1: y1 -> max(2+0, 5+2, 3+4) = 7 ; y2 -> max(2+2, 5+4, 3+2) = 9 ; y3 -> max(2+1, 5+2, 3+6) = 9
        assert phi[0].tolist() == [7, 9, 9]
        assert argmax[0, 0].tolist() == [False, True, True]

    def test_example_matrix_by_enumeration(self, example):
        phi, _ = indirect_surplus_matrix(example)
        ref = np.array([[max(example.alpha[x, z] + example.gamma[z, y] for z in range(3)) for y in range(3)] for x in range(4)])
        assert np.array_equal(phi, ref)

    def test_forbidden_pairs(self):
        spec = tiny([[-np.inf, 1.0]], [[3.0], [-np.inf]])
        phi, argmax = indirect_surplus_matrix(spec)
        assert phi[0, 0] == -np.inf
        assert not argmax.any()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0, 5))
    def test_monotone_in_alpha(self, seed, bump):
        rng = np.random.default_rng(seed)
        spec = tiny(rng.normal(size=(2, 3)), rng.normal(size=(3, 2)), n=[1, 1], m=[1, 1])
        phi, _ = indirect_surplus_matrix(spec)
        up, _ = indirect_surplus_matrix(spec.replace(alpha=spec.alpha + bump))
        assert np.all(up >= phi) and np.allclose(up, phi + bump)


class TestWelfare:
    def test_optimal_assignment_is_31(self, example):
        assert welfare(example, OPTIMAL) == 31
        assert brute_force_welfare(example) == 31

    def test_empty_allocation(self, example):
        assert welfare(example, Allocation.zeros(example)) == 0

    def test_forbidden_pair_rejected(self, example):
        alpha = example.alpha.copy()
        alpha[0, 1] = -np.inf
        with pytest.raises(InfeasibleMass):
            welfare(example.replace(alpha=alpha), OPTIMAL)

    def test_over_allocation_rejected(self, example):
        mu = Allocation([[2, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]], [[1, 1, 0], [0, 0, 0], [0, 0, 0]])
        with pytest.raises(ConstraintViolation):
            welfare(example, mu)

    def test_unbalanced_rejected(self, example):
        mu = Allocation([[1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]], np.zeros((3, 3)))
        with pytest.raises(ConstraintViolation):
            welfare(example, mu)

    def test_free_disposal_allows_surplus_supply(self, example):
        mu = Allocation([[1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]], np.zeros((3, 3)))
        assert welfare(example.replace(free_disposal=True), mu) == 2


class TestVerify:
    def test_equilibrium_prices_all_clear(self, example):
        report = verify_equilibrium(example, [-4, -2, -4], OPTIMAL)
        assert report.ok, report

    def test_zero_prices_flag_violations(self, example):
        report = verify_equilibrium(example, [0, 0, 0], OPTIMAL)
        assert not report.ok
        assert report.people_counting_ok and report.market_clearing_ok
        # at zero prices x4 would rather sell z1 or z3 than stay out
        assert any(v.agent == "x4" and v.chosen is None for v in report.rationality_violations)

    def test_opt_out_rationality(self):
        # the lone producer opts out although p = 1 pays it 2
        spec = tiny([[1.0]], [[1.0]])
        report = verify_equilibrium(spec, [1.0], Allocation.zeros(spec))
        v = report.rationality_violations
        assert len(v) == 1 and v[0].side == "producer" and v[0].chosen is None

    def test_free_disposal_needs_nonpositive_price(self):
        spec = tiny([[1.0]], [[-5.0]], free_disposal=True)
        mu = Allocation([[1.0]], [[0.0]])
        assert verify_equilibrium(spec, [0.0], mu).ok
        assert not verify_equilibrium(spec, [0.5], mu).market_clearing_ok

    def test_wrong_price_length(self, example):
        with pytest.raises(DimensionMismatch):
            verify_equilibrium(example, [0, 0], OPTIMAL)


class TestPriceBounds:
    def test_worked_example_intervals(self, example):
        b = price_bounds(example, IndirectUtilities([3, 0, 4, 0], [8, 9, 10]))
        assert b.p_min.tolist() == [-7, -5, -4]
        assert b.p_max.tolist() == [-4, -2, -4]
        assert b.contains([-5, -3, -4])
        assert not b.contains([-3, -3, -4])

    def test_free_disposal_clamps_lower_bound(self):
        spec = tiny([[1.0]], [[-5.0]], free_disposal=True)
        b = price_bounds(spec, IndirectUtilities([1.0], [0.0]))
        assert b.p_min[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_stable_outcome_dominates_pair_surplus(seed):
    # u_x + v_y >= phi_xy for every pair at the solver's equilibrium
    from hedonic.flow import solve_equilibrium
    from conftest import random_integer_market

    spec = random_integer_market(np.random.default_rng(seed))
    out = solve_equilibrium(spec)
    phi, _ = indirect_surplus_matrix(spec)
    gap = out.u[:, None] + out.v[None, :] - phi
    assert np.all(gap[np.isfinite(phi)] >= -1e-9)
