import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac._linalg import crandn
from isac.bcd import BcdConfig, run_bcd, subspace_basis
from isac.hybrid import (
    HybridConfig,
    _residual,
    factorize_combiner,
    factorize_hybrid,
    hybridize,
    init_hybrid,
    optimize_analog,
    retract,
    riemannian_grad,
    sufficient_rf_analog,
    unit_modulus,
)
from isac.metrics import TradeoffWeights, isac_objective

seeds = st.integers(0, 2**32 - 1)


@given(seed=seeds)
def test_unit_modulus_and_retraction(seed):
    rng = np.random.default_rng(seed)
    m = crandn(rng, (6, 3))
    m[0, 0] = 0
    assert np.allclose(np.abs(unit_modulus(m)), 1.0)
    assert np.allclose(np.abs(retract(m[1:] + 0.1)), 1.0)


@given(seed=seeds)
def test_riemannian_gradient_is_tangent(seed):
    rng = np.random.default_rng(seed)
    z = unit_modulus(crandn(rng, (8, 3)))
    g = riemannian_grad(z, crandn(rng, (8, 3)))
    assert np.allclose(np.real(g * z.conj()), 0.0, atol=1e-12)


@settings(max_examples=10)
@given(seed=seeds)
def test_riemannian_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    t = crandn(rng, (10, 3))
    z = unit_modulus(crandn(rng, (10, 4)))
    f, b, r = _residual(z, t)
    g = riemannian_grad(z, -2.0 * r @ b.conj().T)
    # move along the circle: z * exp(j s phi)
    phi = rng.standard_normal(z.shape)
    s = 1e-6
    fp = _residual(z * np.exp(1j * s * phi), t)[0]
    fm = _residual(z * np.exp(-1j * s * phi), t)[0]
    numeric = (fp - fm) / (2 * s)
    analytic = np.real(np.vdot(g, 1j * phi * z))
    assert numeric == pytest.approx(analytic, rel=1e-5, abs=1e-9)


@settings(max_examples=10)
@given(seed=seeds, n_rf=st.integers(2, 6))
def test_analog_optimization_never_increases_residual(seed, n_rf):
    rng = np.random.default_rng(seed)
    t = crandn(rng, (16, 6))
    z0 = unit_modulus(crandn(rng, (16, n_rf)))
    _, trace, _ = optimize_analog(z0, t, HybridConfig(max_iter=50))
    assert np.all(np.diff(trace) <= 1e-12 * trace[0])


@settings(max_examples=10)
@given(seed=seeds)
def test_digital_part_restores_each_user_power(seed):
    rng = np.random.default_rng(seed)
    F = [crandn(rng, (16, 2)) for _ in range(3)]
    fac = factorize_hybrid(F, 6, HybridConfig(max_iter=30))
    for f, h in zip(F, fac.precoders()):
        assert np.linalg.norm(h) == pytest.approx(np.linalg.norm(f), rel=1e-10)
    assert np.allclose(np.abs(fac.analog), 1.0)


def test_full_rf_chains_are_exact():
    rng = np.random.default_rng(0)
    F = [crandn(rng, (8, 2)) for _ in range(2)]
    fac = factorize_hybrid(F, 8)
    assert fac.residual <= 1e-10


def test_svd_phase_initialization_shapes():
    rng = np.random.default_rng(1)
    F = [crandn(rng, (12, 1)) for _ in range(3)]
    fac = init_hybrid(F, 4)
    assert fac.analog.shape == (12, 4)
    assert [b.shape for b in fac.digital] == [(4, 1)] * 3


def test_path_seed_reproduces_subspace_solution(default_scenario):
    w = TradeoffWeights(1.0, 30.0, 100.0)
    sol, _, basis = run_bcd(default_scenario, BcdConfig(weights=w), rng=0)
    # with clutter nulled the user paths plus the target need 16 chains
    fac = factorize_hybrid(sol.precoders, 16, basis=basis)
    assert fac.residual <= 1e-8


def test_sufficient_analog_matrix_spans_paths(default_scenario):
    basis = subspace_basis(default_scenario)
    z = sufficient_rf_analog(basis, 18)
    assert z.shape == (64, 18) and np.allclose(np.abs(z), 1.0)
    v = basis.basis
    coef = np.linalg.lstsq(z, v, rcond=None)[0]
    assert np.linalg.norm(v - z @ coef) <= 1e-10 * np.linalg.norm(v)
    with pytest.raises(ValueError):
        sufficient_rf_analog(basis, 10)


def test_hybridize_keeps_power_and_objective(default_scenario):
    w = TradeoffWeights(0.5, 30.0, 100.0)
    sol, _, basis = run_bcd(default_scenario, BcdConfig(weights=w), rng=0)
    res = hybridize(default_scenario, sol, 18, 4, basis=basis)
    assert res.solution.total_power() == pytest.approx(default_scenario.power_budget, rel=1e-9)
    a = isac_objective(default_scenario, sol, w)
    b = isac_objective(default_scenario, res.solution, w)
    assert b == pytest.approx(a, rel=1e-6)


def test_combiner_factorization_with_enough_chains_is_exact():
    rng = np.random.default_rng(2)
    w = crandn(rng, (4, 2))
    fac = factorize_combiner(w, 4)
    assert fac.residual <= 1e-10


@pytest.mark.parametrize("n_rf", [0, 17])
def test_rf_chain_count_validated(n_rf):
    with pytest.raises(ValueError):
        factorize_hybrid([np.ones((16, 1))], n_rf)


def test_config_validation():
    with pytest.raises(ValueError):
        HybridConfig(max_iter=0)
    with pytest.raises(ValueError):
        HybridConfig(armijo_shrink=1.0)
