import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isac._linalg import crandn
from isac.metrics import (
    DigitalSolution,
    TradeoffWeights,
    isac_objective,
    max_scnr_beamformer,
    mmse_combiners,
    scnr,
    scnr_terms,
    transmit_beam_pattern,
    user_rate,
    weighted_sum_rate,
    with_optimal_receivers,
)
from isac.model import scenario_from_matrices, steering_vector

from conftest import small_scenario

seeds = st.integers(0, 2**32 - 1)


def random_precoders(rng, sc, power=None):
    d = sc.dims
    F = [crandn(rng, (d.n_tx, d.n_streams)) for _ in range(d.n_users)]
    p = sum(np.linalg.norm(f) ** 2 for f in F)
    power = sc.power_budget if power is None else power
    return [f * np.sqrt(power / p) for f in F]


def test_single_user_rate_equals_capacity_formula():
    rng = np.random.default_rng(0)
    h = crandn(rng, (3, 6))
    sc = scenario_from_matrices([h], crandn(rng, (2, 6)), n_streams=3, noise_user=0.5, power_budget=2.0)
    _, s, vh = np.linalg.svd(h)
    p = np.array([1.0, 0.6, 0.4])
    f = vh.conj().T[:, :3] * np.sqrt(p)
    sol = with_optimal_receivers(sc, [f])
    expected = np.sum(np.log2(1 + s**2 * p / 0.5))
    assert user_rate(sc, sol, 0) == pytest.approx(expected, rel=1e-10)


@given(seed=seeds)
def test_rate_invariant_to_invertible_combiner_change(seed):
    rng = np.random.default_rng(seed)
    sc = small_scenario(seed % 7)
    F = random_precoders(rng, sc)
    sol = with_optimal_receivers(sc, F)
    t = crandn(rng, (sc.dims.n_streams, sc.dims.n_streams)) + 2 * np.eye(sc.dims.n_streams)
    sol2 = DigitalSolution(F, [w @ t for w in sol.combiners], sol.radar_beamformer)
    assert weighted_sum_rate(sc, sol2) == pytest.approx(weighted_sum_rate(sc, sol), rel=1e-9)


@given(seed=seeds)
def test_mmse_combiner_beats_random_combiner(seed):
    rng = np.random.default_rng(seed)
    sc = small_scenario(seed % 5)
    F = random_precoders(rng, sc)
    best = with_optimal_receivers(sc, F)
    rand = DigitalSolution(F, [crandn(rng, w.shape) for w in best.combiners], best.radar_beamformer)
    for k in range(sc.dims.n_users):
        assert user_rate(sc, best, k) >= user_rate(sc, rand, k) - 1e-9


@given(seed=seeds, scale=st.floats(1e-3, 1e3))
def test_scnr_invariant_to_beamformer_scale(seed, scale):
    rng = np.random.default_rng(seed)
    sc = small_scenario(seed % 5)
    sol = with_optimal_receivers(sc, random_precoders(rng, sc))
    scaled = DigitalSolution(sol.precoders, sol.combiners, scale * np.exp(0.3j) * sol.radar_beamformer)
    assert scnr(sc, scaled) == pytest.approx(scnr(sc, sol), rel=1e-9)


@given(seed=seeds)
def test_max_scnr_beamformer_is_optimal(seed):
    rng = np.random.default_rng(seed)
    sc = small_scenario(seed % 5)
    F = np.hstack(random_precoders(rng, sc))
    w = max_scnr_beamformer(sc, F)
    num, den = scnr_terms(sc, F, w)
    for _ in range(5):
        v = crandn(rng, w.shape)
        n2, d2 = scnr_terms(sc, F, v)
        assert n2 / d2 <= num / den * (1 + 1e-9)


def test_max_scnr_falls_back_to_steering_vector_when_target_dark():
    sc = scenario_from_matrices([np.eye(2, 4)], np.zeros((3, 4)), target_aoa=0.2)
    w = max_scnr_beamformer(sc, np.ones((4, 1)))
    assert np.allclose(w, steering_vector(3, 0.2))


def test_mmse_combiner_formula():
    rng = np.random.default_rng(4)
    sc = small_scenario(4)
    F = random_precoders(rng, sc)
    for k, w in enumerate(mmse_combiners(sc, F)):
        h = sc.channels[k]
        cov = sc.noise_user[k] * np.eye(h.shape[0]) + sum(h @ f @ f.conj().T @ h.conj().T for f in F)
        assert np.allclose(cov @ w, h @ F[k])


@given(eta=st.floats(0, 1), c1=st.floats(0.1, 10), c2=st.floats(0.1, 10), seed=seeds)
def test_objective_is_the_weighted_combination(eta, c1, c2, seed):
    rng = np.random.default_rng(seed)
    sc = small_scenario(seed % 3)
    sol = with_optimal_receivers(sc, random_precoders(rng, sc))
    w = TradeoffWeights(eta, c1, c2)
    expected = eta / c1 * weighted_sum_rate(sc, sol) + (1 - eta) / c2 * scnr(sc, sol)
    assert isac_objective(sc, sol, w) == pytest.approx(expected, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("kwargs", [dict(eta=-0.1), dict(eta=1.5), dict(cons1=0.0), dict(cons2=-1.0)])
def test_tradeoff_weights_validated(kwargs):
    with pytest.raises(ValueError):
        TradeoffWeights(**kwargs)


@given(theta=st.floats(-1.4, 1.4))
def test_beam_pattern_peaks_at_steering_angle(theta):
    f = steering_vector(32, theta)[:, None]
    grid = np.linspace(-np.pi / 2, np.pi / 2, 2001)
    pat = transmit_beam_pattern(f, np.append(grid, theta))
    assert pat[-1] == pytest.approx(1.0)
    assert pat.max() <= 1.0 + 1e-12


def test_beam_pattern_rejects_empty_grid():
    with pytest.raises(ValueError):
        transmit_beam_pattern(np.ones((4, 1)), [])


def test_weighted_sum_rate_respects_user_weights(small):
    rng = np.random.default_rng(0)
    sol = with_optimal_receivers(small, random_precoders(rng, small))
    r = [user_rate(small, sol, k) for k in range(2)]
    sc = small.with_weights([2.0, 0.0])
    assert weighted_sum_rate(sc, sol) == pytest.approx(2 * r[0])
