"""Subspace-reduced block coordinate descent for the digital ISAC transceiver.

Every optimal precoder lies in the span of the transmit steering vectors of
all propagation paths (user paths, the target, the clutter patches), so the
solver works with ``F_k = V X_k`` where ``V`` has only ``r`` columns. The
power constraint is dropped by folding the power budget into the noise terms
(the objective becomes scale invariant in ``X``), and the precoder is
rescaled to full power at the end.

The sum rate is handled with the weighted-MMSE identity (weight matrices
``Lambda_k``) and the SCNR with a quadratic transform (auxiliary vector
``u``). Each block then has a closed-form update:

    w -> W_k -> Lambda_k -> X_k -> u_k

Rates are in bits, so the weighted-MMSE terms carry an extra ``1/ln 2`` on
their weights; with that, the surrogate is tight and the true objective is
non-decreasing from sweep to sweep.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from ._linalg import crandn, herm, hermitize, logdet_hpd, solve_psd
from .metrics import (
    LN2,
    DegenerateCombinerError,
    DigitalSolution,
    TradeoffWeights,
    TraceRecord,
    combiner_range,
    mse_matrix,
    rate_from_terms,
    scnr,
    weighted_sum_rate,
)
from .model import steering_matrix, steering_vector

log = logging.getLogger(__name__)


@dataclass
class SubspaceBasis:
    basis: np.ndarray
    r: int
    n_user_paths: int = 0
    n_clutter: int = 0
    has_target: bool = True
    is_identity: bool = False


@dataclass
class ReducedState:
    reduced_channels: List[np.ndarray]
    reduced_target: np.ndarray
    reduced_clutters: List[np.ndarray]
    gram: np.ndarray
    x: Optional[List[np.ndarray]] = None
    combiners: Optional[List[np.ndarray]] = None
    weight_mats: Optional[List[np.ndarray]] = None
    radar_w: Optional[np.ndarray] = None
    aux_u: Optional[np.ndarray] = None

    @property
    def r(self):
        return self.gram.shape[0]

    @property
    def stacked_x(self):
        return np.hstack(self.x)

    def copy(self):
        def cp(v):
            if v is None:
                return None
            if isinstance(v, list):
                return [a.copy() for a in v]
            return v.copy()

        return ReducedState(
            reduced_channels=self.reduced_channels,
            reduced_target=self.reduced_target,
            reduced_clutters=self.reduced_clutters,
            gram=self.gram,
            x=cp(self.x),
            combiners=cp(self.combiners),
            weight_mats=cp(self.weight_mats),
            radar_w=cp(self.radar_w),
            aux_u=cp(self.aux_u),
        )


@dataclass
class BcdConfig:
    tol: float = 1e-4
    max_iter: int = 100
    weights: TradeoffWeights = field(default_factory=TradeoffWeights)
    # rescale X to full power after every sweep; the iterates are scale
    # equivariant so this only changes the bookkeeping
    renormalize_each_sweep: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def subspace_basis(scenario, weights=None, prune=False):
    """Steering vectors of all user paths, the target and every clutter patch.

    With ``prune=True`` and a zero trade-off weight, the paths irrelevant to
    the surviving task are left out (user paths when only sensing matters,
    target and clutter when only communication matters).
    """
    d = scenario.dims
    keep_users = keep_sensing = True
    if prune and weights is not None:
        keep_sensing = weights.rho_s != 0
        keep_users = weights.rho_c != 0
    user_aods = np.concatenate([np.atleast_1d(a) for a in scenario.ue_aods]) if keep_users else []
    angles = list(user_aods)
    if keep_sensing:
        angles.append(scenario.target_aod)
        angles.extend(scenario.clutter_aods)
    r = len(angles)
    if r > d.n_tx:
        warnings.warn(
            f"{r} paths exceed {d.n_tx} antennas; subspace reduction disabled",
            RuntimeWarning,
            stacklevel=2,
        )
        return SubspaceBasis(np.eye(d.n_tx, dtype=complex), d.n_tx, is_identity=True)
    return SubspaceBasis(
        basis=steering_matrix(d.n_tx, angles),
        r=r,
        n_user_paths=len(user_aods),
        n_clutter=d.n_clutter if keep_sensing else 0,
        has_target=keep_sensing,
    )


def identity_basis(scenario):
    n = scenario.dims.n_tx
    return SubspaceBasis(np.eye(n, dtype=complex), n, is_identity=True)


def reduce_scenario(scenario, basis):
    v = basis.basis
    return ReducedState(
        reduced_channels=[h @ v for h in scenario.channels],
        reduced_target=scenario.target @ v,
        reduced_clutters=[b @ v for b in scenario.clutters],
        gram=hermitize(herm(v) @ v),
    )


def power_scale(state):
    """sum_k tr(V^H V X_k X_k^H): transmit power of V X before normalization."""
    x = state.stacked_x
    return float(np.real(np.trace(herm(x) @ state.gram @ x)))


def _noise_level(state, scenario, noise):
    return noise / scenario.power_budget * power_scale(state)


def _clutter_cov(state, scenario):
    x = state.stacked_x
    n = state.reduced_target.shape[0]
    cov = _noise_level(state, scenario, scenario.noise_radar) * np.eye(n, dtype=complex)
    for b in state.reduced_clutters:
        bx = b @ x
        cov = cov + bx @ herm(bx)
    return cov


def _comm_weights(scenario, weights):
    return weights.rho_c * np.asarray(scenario.user_weights, dtype=float) / LN2


def update_radar_beamformer(state, scenario):
    """Exact minimizer of the quadratic-transform term over the radar vector."""
    u = state.aux_u
    nu = float(np.real(np.vdot(u, u)))
    if nu == 0.0:
        raise ValueError("auxiliary vector u is zero; reinitialize it first")
    rhs = state.reduced_target @ state.stacked_x @ u
    return np.linalg.solve(_clutter_cov(state, scenario), rhs) / nu


def update_combiner(state, scenario, k):
    """MMSE combiner of user ``k`` in the reduced problem."""
    h = state.reduced_channels[k]
    cov = _noise_level(state, scenario, scenario.noise_user[k]) * np.eye(h.shape[0], dtype=complex)
    for x in state.x:
        hx = h @ x
        cov = cov + hx @ herm(hx)
    return np.linalg.solve(cov, h @ state.x[k])


def update_weight_matrix(state, k):
    """Lambda_k = (I - W_k^H Hbar_k X_k)^-1, symmetrized."""
    eff = herm(state.combiners[k]) @ state.reduced_channels[k] @ state.x[k]
    m = np.eye(eff.shape[0]) - eff
    return hermitize(np.linalg.inv(m))


def _precoder_system(state, scenario, weights):
    """Left-hand matrix shared by every X_k update."""
    c = _comm_weights(scenario, weights)
    rho_s = weights.rho_s
    r = state.r
    m = np.zeros((r, r), dtype=complex)
    gram_coef = 0.0
    p = scenario.power_budget
    for i in range(scenario.dims.n_users):
        if c[i] == 0:
            continue
        hw = herm(state.reduced_channels[i]) @ state.combiners[i]
        m += c[i] * hw @ state.weight_mats[i] @ herm(hw)
        wtw = herm(state.combiners[i]) @ state.combiners[i]
        gram_coef += c[i] * scenario.noise_user[i] / p * float(
            np.real(np.trace(state.weight_mats[i] @ wtw))
        )
    if rho_s != 0:
        w = state.radar_w
        nu = float(np.real(np.vdot(state.aux_u, state.aux_u)))
        for b in state.reduced_clutters:
            bw = herm(b) @ w
            m += rho_s * nu * np.outer(bw, bw.conj())
        gram_coef += rho_s * scenario.noise_radar / p * nu * float(np.real(np.vdot(w, w)))
    m += gram_coef * state.gram
    return hermitize(m)


def _precoder_rhs(state, scenario, weights, k):
    c = _comm_weights(scenario, weights)
    ns = state.x[k].shape[1]
    rhs = np.zeros((state.r, ns), dtype=complex)
    if c[k] != 0:
        rhs += c[k] * herm(state.reduced_channels[k]) @ state.combiners[k] @ state.weight_mats[k]
    if weights.rho_s != 0:
        uk = state.aux_u[k * ns:(k + 1) * ns]
        aw = herm(state.reduced_target) @ state.radar_w
        rhs += weights.rho_s * np.outer(aw, uk.conj())
    return rhs


def update_reduced_precoder(state, scenario, weights, k):
    """Closed-form minimizer of the surrogate over X_k."""
    m = _precoder_system(state, scenario, weights)
    return solve_psd(m, _precoder_rhs(state, scenario, weights, k))


def update_reduced_precoders(state, scenario, weights):
    """All X_k at once; they share one system matrix and decouple."""
    m = _precoder_system(state, scenario, weights)
    ns = state.x[0].shape[1]
    rhs = np.hstack([_precoder_rhs(state, scenario, weights, k) for k in range(len(state.x))])
    sol = solve_psd(m, rhs)
    return [sol[:, k * ns:(k + 1) * ns] for k in range(len(state.x))]


def _scnr_denominator(state, scenario):
    w = state.radar_w
    return float(np.real(np.vdot(w, _clutter_cov(state, scenario) @ w)))


def update_auxiliary_u(state, scenario, k):
    """u_k making the quadratic transform tight for the current (X, w)."""
    w = state.radar_w
    if not np.any(w):
        raise ValueError("radar beamformer is zero")
    den = _scnr_denominator(state, scenario)
    return herm(state.x[k]) @ herm(state.reduced_target) @ w / den


def _all_u(state, scenario):
    return np.concatenate(
        [update_auxiliary_u(state, scenario, k) for k in range(len(state.x))]
    )


def surrogate_value(state, scenario, weights):
    """Surrogate objective in maximization form (tight lower bound)."""
    c = _comm_weights(scenario, weights)
    value = 0.0
    for k in range(len(state.x)):
        if c[k] == 0:
            continue
        noise = _noise_level(state, scenario, scenario.noise_user[k])
        e = mse_matrix(state.reduced_channels[k], state.x, state.combiners[k], k, noise)
        lam = state.weight_mats[k]
        value += c[k] * (
            logdet_hpd(lam) - float(np.real(np.trace(lam @ e))) + lam.shape[0]
        )
    if weights.rho_s != 0:
        w, u = state.radar_w, state.aux_u
        lin = 2.0 * float(np.real(np.vdot(w, state.reduced_target @ state.stacked_x @ u)))
        quad = float(np.real(np.vdot(u, u))) * _scnr_denominator(state, scenario)
        value += weights.rho_s * (lin - quad)
    return float(value)


def reduced_metrics(state, scenario):
    """(WSR, SCNR) of the normalized precoder, computed in reduced coordinates."""
    wsr = 0.0
    for k, h in enumerate(state.reduced_channels):
        if scenario.user_weights[k] == 0:
            continue
        wk = combiner_range(state.combiners[k])
        eff = [herm(wk) @ h @ x for x in state.x]
        sig = eff[k] @ herm(eff[k])
        noise = _noise_level(state, scenario, scenario.noise_user[k])
        interf = noise * (herm(wk) @ wk)
        for j, e in enumerate(eff):
            if j != k:
                interf = interf + e @ herm(e)
        try:
            wsr += scenario.user_weights[k] * rate_from_terms(sig, interf)
        except DegenerateCombinerError:
            wsr = float("nan")
    w = state.radar_w
    num = float(np.linalg.norm(w.conj() @ state.reduced_target @ state.stacked_x) ** 2)
    s = num / _scnr_denominator(state, scenario)
    return float(wsr), float(s)


def reduced_objective(state, scenario, weights):
    wsr, s = reduced_metrics(state, scenario)
    value = 0.0
    if weights.rho_c != 0:
        value += weights.rho_c * wsr
    if weights.rho_s != 0:
        value += weights.rho_s * s
    return float(value), wsr, s


def normalization_factor(state, scenario):
    s = power_scale(state)
    if not s > 0:
        raise ValueError("all-zero precoder (trivial point) cannot be normalized")
    return float(np.sqrt(scenario.power_budget / s))


def normalize_precoder(state, basis, scenario):
    """F_k = alpha V X_k with alpha restoring full transmit power."""
    alpha = normalization_factor(state, scenario)
    return [alpha * basis.basis @ x for x in state.x]


def initial_state(scenario, basis, rng=None, x=None):
    """Random full-power X, identity combiners/weights, w pointed at the target."""
    d = scenario.dims
    state = reduce_scenario(scenario, basis)
    if x is None:
        rng = np.random.default_rng(rng)
        x = [crandn(rng, (basis.r, d.n_streams)) for _ in range(d.n_users)]
    state.x = [np.array(xi, dtype=complex) for xi in x]
    alpha = normalization_factor(state, scenario)
    state.x = [alpha * xi for xi in state.x]
    state.combiners = [np.eye(d.n_rx, d.n_streams, dtype=complex) for _ in range(d.n_users)]
    state.weight_mats = [np.eye(d.n_streams, dtype=complex) for _ in range(d.n_users)]
    state.radar_w = steering_vector(d.n_sensor, scenario.target_aoa)
    state.aux_u = _all_u(state, scenario)
    return state


def coordinates_in_basis(basis, precoders):
    """Least-squares X_k with V X_k = F_k (exact when F_k lies in range(V))."""
    return [np.linalg.lstsq(basis.basis, f, rcond=None)[0] for f in precoders]


def bcd_sweep(state, scenario, weights):
    """One pass of the five block updates, in place."""
    if np.any(state.aux_u):
        state.radar_w = update_radar_beamformer(state, scenario)
    state.combiners = [update_combiner(state, scenario, k) for k in range(len(state.x))]
    state.weight_mats = [update_weight_matrix(state, k) for k in range(len(state.x))]
    state.x = update_reduced_precoders(state, scenario, weights)
    state.aux_u = _all_u(state, scenario)


def run_bcd(scenario, config=None, init=None, rng=None, basis=None):
    """Run the block coordinate descent; returns (solution, final state, basis)."""
    config = config or BcdConfig()
    weights = config.weights
    if basis is None:
        basis = subspace_basis(scenario)
    state = init.copy() if init is not None else initial_state(scenario, basis, rng)
    if state.aux_u is None:
        state.aux_u = _all_u(state, scenario)

    def record(it):
        obj, wsr, s = reduced_objective(state, scenario, weights)
        sur = surrogate_value(state, scenario, weights)
        return TraceRecord(it, sur, obj, wsr, s)

    trace = [record(0)]
    best = (trace[0].objective, state.copy())
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        bcd_sweep(state, scenario, weights)
        if config.renormalize_each_sweep:
            alpha = normalization_factor(state, scenario)
            state.x = [alpha * x for x in state.x]
            state.aux_u = _all_u(state, scenario)
            # the combiners scale as 1/alpha under X -> alpha X
            state.combiners = [w / alpha for w in state.combiners]
        trace.append(record(it))
        if trace[-1].objective >= best[0]:
            best = (trace[-1].objective, state.copy())
        if abs(trace[-1].objective - trace[-2].objective) < config.tol:
            converged = True
            break
    if not converged:
        log.info("BCD stopped at max_iter=%d without meeting tol=%g", config.max_iter, config.tol)

    final = best[1]
    sol = DigitalSolution(
        precoders=normalize_precoder(final, basis, scenario),
        combiners=[w.copy() for w in final.combiners],
        radar_beamformer=final.radar_w.copy(),
        objective_trace=[t.objective for t in trace],
        converged=converged,
        iterations=it,
        trace=trace,
    )
    return sol, final, basis


def solve_bcd(scenario, config=None, init=None, rng=None, basis=None):
    """Digital transceiver from the subspace-reduced BCD."""
    return run_bcd(scenario, config, init=init, rng=rng, basis=basis)[0]


def calibrate_tradeoff(scenario, eta, config=None, rng=None):
    """Normalization constants from the single-task optima of this scenario.

    cons1 is the WSR reached when only communication matters (eta = 1) and
    cons2 the SCNR reached when only sensing matters (eta = 0), which puts
    both terms of the scalarized objective on a comparable scale.
    """
    config = config or BcdConfig()
    seeds = np.random.default_rng(rng).spawn(2)
    comm = solve_bcd(scenario, _with_weights(config, TradeoffWeights(1.0)), rng=seeds[0])
    sens = solve_bcd(scenario, _with_weights(config, TradeoffWeights(0.0)), rng=seeds[1])
    cons1 = weighted_sum_rate(scenario, comm)
    cons2 = scnr(scenario, sens)
    return TradeoffWeights(eta, cons1=max(cons1, 1e-12), cons2=max(cons2, 1e-12))


def _with_weights(config, weights):
    return replace(config, weights=weights)
