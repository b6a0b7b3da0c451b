import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac._linalg import crandn
from isac.bcd import BcdConfig, initial_state, normalization_factor, subspace_basis
from isac.metrics import TradeoffWeights, isac_objective, with_optimal_receivers
from isac.oracle import (
    ReferenceConfig,
    analytic_gradients,
    gradient_relative_error,
    is_trivial_point,
    kkt_report,
    numeric_gradients,
    power_problem_value,
    projected_gradient_reference,
    scaling_equivalence_check,
    subspace_residual,
    waterfilling_grid_oracle,
)
from isac.model import SystemDims, build_scenario

from conftest import small_scenario

seeds = st.integers(0, 2**32 - 1)
WEIGHTS = TradeoffWeights(0.5, 5.0, 50.0)


def _random_solution(sc, rng):
    d = sc.dims
    F = [crandn(rng, (d.n_tx, d.n_streams)) for _ in range(d.n_users)]
    p = sum(np.linalg.norm(f) ** 2 for f in F)
    return with_optimal_receivers(sc, [f * np.sqrt(sc.power_budget / p) for f in F])


@settings(max_examples=10)
@given(seed=seeds, eta=st.floats(0.0, 1.0))
def test_analytic_gradient_matches_central_differences(seed, eta):
    sc = small_scenario(seed % 13)
    sol = _random_solution(sc, np.random.default_rng(seed))
    w = TradeoffWeights(eta, 5.0, 50.0)
    err = gradient_relative_error(analytic_gradients(sc, sol, w), numeric_gradients(sc, sol, w))
    assert err <= 1e-5


def test_gradient_with_two_streams():
    dims = SystemDims(n_tx=8, n_rx=3, n_streams=2, n_users=2, n_rf_tx=4, n_rf_rx=2, n_sensor=3, n_clutter=1)
    sc = build_scenario(np.random.default_rng(3), dims=dims)
    sol = _random_solution(sc, np.random.default_rng(3))
    err = gradient_relative_error(analytic_gradients(sc, sol, WEIGHTS), numeric_gradients(sc, sol, WEIGHTS))
    assert err <= 1e-5


def test_reference_solver_is_monotone_and_in_subspace():
    sc = small_scenario(1)
    ref = projected_gradient_reference(sc, WEIGHTS, ReferenceConfig(max_iter=400), rng=0)
    trace = np.array(ref.objective_trace)
    assert np.all(np.diff(trace) >= -1e-9 * abs(trace).max())
    assert ref.total_power() <= sc.power_budget * (1 + 1e-12)
    assert not is_trivial_point(sc, ref.precoders)
    assert subspace_residual(subspace_basis(sc), ref.precoders) <= 1e-3


def test_reference_solver_reaches_stationarity():
    sc = small_scenario(2)
    ref = projected_gradient_reference(sc, WEIGHTS, rng=0)
    rep = kkt_report(sc, ref, WEIGHTS)
    assert rep.relative_residual <= 1e-2
    assert rep.dual_lambda >= 0
    assert abs(rep.power_slack) <= 1e-9 * sc.power_budget


def test_random_point_is_not_stationary():
    sc = small_scenario(2)
    rep = kkt_report(sc, _random_solution(sc, np.random.default_rng(0)), WEIGHTS)
    assert rep.relative_residual > 1e-2


def test_trivial_point_detection():
    sc = small_scenario(0)
    basis = subspace_basis(sc)
    # a vector orthogonal to every path direction is invisible to all users and the target
    q, _ = np.linalg.qr(np.hstack([basis.basis, crandn(np.random.default_rng(0), (16, 1))]))
    f = q[:, -1:]
    assert is_trivial_point(sc, [f, f])
    assert not is_trivial_point(sc, [basis.basis[:, :1], f])


@settings(max_examples=5)
@given(seed=seeds)
def test_scaling_identity(seed):
    sc = small_scenario(seed % 7)
    rep = scaling_equivalence_check(sc, WEIGHTS, BcdConfig(weights=WEIGHTS), rng=seed)
    assert rep.objective_gap <= 1e-6 * max(1.0, abs(rep.constrained_objective))
    assert rep.alpha == pytest.approx(rep.alpha_direct, rel=1e-10)
    assert rep.combiner_gap <= 1e-6 and rep.radar_gap <= 1e-6


def test_prenormalized_state_has_unit_alpha(small):
    st_ = initial_state(small, subspace_basis(small), rng=0)
    assert normalization_factor(st_, small) == pytest.approx(1.0, rel=1e-12)


def test_grid_oracle_linear_case_picks_best_vertex():
    d = np.array([[0.2, 0.7]])
    res = waterfilling_grid_oracle(0.0, 1.0, [1.0], [[1.0, 1.0]], [1.0], d, 0.5, 3.0, points=5000)
    assert res.comm[0, 1] == pytest.approx(3.0)
    assert res.value == pytest.approx(2.1)


@given(
    comm=st.lists(st.floats(0, 2), min_size=2, max_size=2),
    sense=st.floats(0, 2),
    rho=st.floats(0, 2),
)
def test_power_problem_value_definition(comm, sense, rho):
    gains, d, g = [[1.5, 0.5]], [[0.1, 0.3]], 0.4
    v = power_problem_value([comm], sense, 1.0, rho, [1.0], gains, [0.5], d, g)
    expected = np.log2(1 + 2.25 * comm[0] / 0.5) + np.log2(1 + 0.25 * comm[1] / 0.5)
    expected += rho * (0.1 * comm[0] + 0.3 * comm[1] + 0.4 * sense)
    assert v == pytest.approx(expected)


def test_grid_oracle_refuses_large_problems():
    with pytest.raises(ValueError):
        waterfilling_grid_oracle(1, 1, np.ones(5), np.ones((5, 1)), np.ones(5), np.zeros((5, 1)), 0.0, 1.0)


def test_subspace_residual_of_basis_columns_is_zero(small):
    b = subspace_basis(small)
    assert subspace_residual(b, [b.basis[:, :1], b.basis[:, 1:2]]) <= 1e-12


def test_reference_beats_or_matches_random_start(small):
    ref = projected_gradient_reference(small, WEIGHTS, ReferenceConfig(max_iter=100), rng=0)
    start = _random_solution(small, np.random.default_rng(0))
    assert isac_objective(small, ref, WEIGHTS) >= isac_objective(small, start, WEIGHTS)
