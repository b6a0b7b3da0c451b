"""Performance functionals: rates, SCNR, the scalarized ISAC objective."""

from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg

from ._linalg import herm, logdet_hpd, row_space
from .model import steering_matrix

LN2 = np.log(2.0)


class DegenerateCombinerError(ValueError):
    """Interference-plus-noise matrix of a user is singular."""


@dataclass(frozen=True)
class TradeoffWeights:
    eta: float = 0.5
    cons1: float = 1.0
    cons2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.cons1 <= 0 or self.cons2 <= 0:
            raise ValueError("normalization constants must be positive")

    @property
    def rho_c(self):
        return self.eta / self.cons1

    @property
    def rho_s(self):
        return (1.0 - self.eta) / self.cons2


@dataclass
class TraceRecord:
    iteration: int
    surrogate: float
    objective: float
    wsr: float
    scnr: float


@dataclass
class DigitalSolution:
    precoders: List[np.ndarray]
    combiners: List[np.ndarray]
    radar_beamformer: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    trace: List[TraceRecord] = field(default_factory=list)

    @property
    def stacked_precoder(self):
        return np.hstack(self.precoders)

    def total_power(self):
        return float(sum(np.linalg.norm(f) ** 2 for f in self.precoders))


def combiner_range(combiner, rtol=1e-12):
    """Orthonormal basis of the combiner's column space.

    The rate only depends on range(W); working with an orthonormal basis keeps
    the interference-plus-noise matrix well conditioned when a stream has been
    switched off and its combiner column has collapsed.
    """
    return row_space(herm(combiner), rtol=rtol)


def _rate_terms(channel, precoders, combiner, k, noise):
    """(desired covariance, interference-plus-noise) seen after the combiner."""
    combiner = combiner_range(combiner)
    eff = [herm(combiner) @ channel @ f for f in precoders]
    signal = eff[k] @ herm(eff[k])
    interf = noise * (herm(combiner) @ combiner)
    for j, e in enumerate(eff):
        if j != k:
            interf = interf + e @ herm(e)
    return signal, interf


def rate_from_terms(signal, interf):
    """log2 det(I + S J^-1) evaluated as log det(J + S) - log det(J)."""
    try:
        base = logdet_hpd(interf)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCombinerError("interference-plus-noise matrix is singular") from exc
    total = logdet_hpd(interf + signal)
    return max(total - base, 0.0) / LN2


def user_rate(scenario, solution, k):
    """Achievable rate of user ``k`` in bits/s/Hz."""
    signal, interf = _rate_terms(
        scenario.channels[k],
        solution.precoders,
        solution.combiners[k],
        k,
        scenario.noise_user[k],
    )
    return rate_from_terms(signal, interf)


def user_rates(scenario, solution):
    return np.array([user_rate(scenario, solution, k) for k in range(scenario.dims.n_users)])


def weighted_sum_rate(scenario, solution):
    w = np.asarray(scenario.user_weights, dtype=float)
    total = 0.0
    for k in range(scenario.dims.n_users):
        if w[k] != 0:
            total += w[k] * user_rate(scenario, solution, k)
    return float(total)


def scnr_terms(scenario, precoder, w):
    """(signal power, clutter-plus-noise power) at the radar output."""
    f = np.atleast_2d(precoder)
    wh = w.conj()
    signal = float(np.linalg.norm(wh @ scenario.target @ f) ** 2)
    clutter = sum(float(np.linalg.norm(wh @ b @ f) ** 2) for b in scenario.clutters)
    return signal, clutter + scenario.noise_radar * float(np.real(wh @ w))


def scnr(scenario, solution):
    num, den = scnr_terms(scenario, solution.stacked_precoder, solution.radar_beamformer)
    return num / den


def isac_objective(scenario, solution, weights):
    """rho_c * WSR + rho_s * SCNR; a term with zero weight is not evaluated."""
    value = 0.0
    if weights.rho_c != 0:
        value += weights.rho_c * weighted_sum_rate(scenario, solution)
    if weights.rho_s != 0:
        value += weights.rho_s * scnr(scenario, solution)
    return float(value)


def mse_matrix(channel, precoders, combiner, k, noise_var):
    """MSE matrix of user ``k`` for a linear receiver.

    Works for both the full problem (``channel = H_k``, ``noise_var =
    sigma_k^2``) and the reduced one (``channel = H_k V``, ``noise_var`` the
    power-normalized noise level).
    """
    eff = herm(combiner) @ channel @ precoders[k]
    n = eff.shape[0]
    resid = np.eye(n) - eff
    e = resid @ herm(resid)
    for j, x in enumerate(precoders):
        if j != k:
            t = herm(combiner) @ channel @ x
            e = e + t @ herm(t)
    e = e + noise_var * (herm(combiner) @ combiner)
    return 0.5 * (e + herm(e))


def transmit_beam_pattern(precoder, angles):
    """||a_t(theta)^H F||^2 for every angle (radians) in ``angles``."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size == 0:
        raise ValueError("angle grid is empty")
    f = np.atleast_2d(precoder)
    if f.shape[0] == 1 and f.shape[1] > 1:
        f = f.T
    a = steering_matrix(f.shape[0], angles)
    return np.sum(np.abs(herm(a) @ f) ** 2, axis=1)


def mmse_combiners(scenario, precoders):
    """Linear MMSE receive filters for every user given the precoders."""
    out = []
    for k, h in enumerate(scenario.channels):
        hf = [h @ f for f in precoders]
        cov = scenario.noise_user[k] * np.eye(h.shape[0], dtype=complex)
        for t in hf:
            cov = cov + t @ herm(t)
        out.append(np.linalg.solve(cov, hf[k]))
    return out


def max_scnr_beamformer(scenario, precoder):
    """Radar receive vector maximizing the SCNR for a fixed precoder.

    Dominant generalized eigenvector of (A F F^H A^H, clutter + noise). When
    the target is not illuminated, falls back to the target steering vector.
    """
    f = np.atleast_2d(precoder)
    af = scenario.target @ f
    n = scenario.dims.n_sensor
    den = scenario.noise_radar * np.eye(n, dtype=complex)
    for b in scenario.clutters:
        bf = b @ f
        den = den + bf @ herm(bf)
    num = af @ herm(af)
    if np.linalg.norm(num) == 0:
        return steering_matrix(n, [scenario.target_aoa])[:, 0]
    vals, vecs = scipy.linalg.eigh(0.5 * (num + herm(num)), 0.5 * (den + herm(den)))
    w = vecs[:, -1]
    return w / np.linalg.norm(w)


def with_optimal_receivers(scenario, precoders, *, combiners=None):
    """A :class:`DigitalSolution` whose receivers are re-optimized for ``precoders``."""
    if combiners is None:
        combiners = mmse_combiners(scenario, precoders)
    return DigitalSolution(
        precoders=list(precoders),
        combiners=list(combiners),
        radar_beamformer=max_scnr_beamformer(scenario, np.hstack(precoders)),
    )
