import numpy as np
import pytest

from hedonic.entropy import HeterogeneitySpec, emax_gradient, solve_price_equilibrium
from hedonic.errors import BoundarySupport, DimensionMismatch, NotAProbability
from hedonic.identification import (
    ObservedMarket,
    identify_primitives,
    identify_systematic,
    systematic_utilities,
)

from conftest import random_logit_market


def observed(spec, het=None):
    eq = solve_price_equilibrium(spec, het)
    return eq, ObservedMarket.from_equilibrium(eq, spec.n, spec.m, het)


def test_systematic_utilities(example):
    s = systematic_utilities(example, [1.0, 2.0, 3.0])
    assert s.U[0].tolist() == [3, 7, 6]
    assert s.V[:, 0].tolist() == [-1, 0, 1]


def test_log_odds_on_known_shares():
    obs = ObservedMarket([[0.25, 0.75]], [[0.5, 0.5]], [1], [1], [0.0])
    utils, residual = identify_systematic(obs)
    assert utils.U[0, 0] == pytest.approx(np.log(3))
    assert utils.V[0, 0] == pytest.approx(0.0)
    assert residual == 0.0


@pytest.mark.parametrize("method", ["closed", "numeric"])
def test_worked_example_recovers_primitives(example, method):
    _, obs = observed(example)
    ident = identify_primitives(obs, method=method)
    assert np.max(np.abs(ident.alpha_hat - example.alpha)) < 1e-8
    assert np.max(np.abs(ident.gamma_hat - example.gamma)) < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_random_round_trip(seed):
    spec = random_logit_market(np.random.default_rng(seed), 5, 5, 4)
    _, obs = observed(spec)
    ident = identify_primitives(obs)
    assert np.max(np.abs(ident.alpha_hat - spec.alpha)) < 1e-8
    assert np.max(np.abs(ident.gamma_hat - spec.gamma)) < 1e-8


def test_empirical_shares_are_reproduced():
    rng = np.random.default_rng(5)
    from hedonic.market import MarketSpec

    spec = MarketSpec(["x"], ["y"], ["a", "b"], [1], [1], [[0.2, -0.3]], [[0.1], [0.4]])
    het = HeterogeneitySpec.empirical([rng.gumbel(size=(60, 3))], [rng.gumbel(size=(60, 3))])
    p = np.array([0.05, -0.1])
    U = spec.alpha + p
    V = (spec.gamma - p[:, None]).T
    sx = np.array([emax_gradient(U[0], het.producer(0))])
    sy = np.array([emax_gradient(V[0], het.consumer(0))])
    ident = identify_primitives(ObservedMarket(sx, sy, spec.n, spec.m, p, het))
    assert ident.residual < 1e-9


def test_zero_opt_out_share_rejected():
    with pytest.raises(BoundarySupport, match="opt-out"):
        identify_systematic(ObservedMarket([[0.0, 1.0]], [[0.5, 0.5]], [1], [1], [0.0]))


def test_invalid_shares_rejected():
    with pytest.raises(NotAProbability):
        ObservedMarket([[0.4, 0.4]], [[0.5, 0.5]], [1], [1], [0.0])
    with pytest.raises(DimensionMismatch):
        ObservedMarket([[0.5, 0.5]], [[0.5, 0.5]], [1], [1], [0.0, 1.0])
    with pytest.raises(DimensionMismatch):
        ObservedMarket([[0.5, 0.5]], [[0.5, 0.5]], [1, 2], [1], [0.0])
