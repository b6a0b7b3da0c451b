"""Closed-form transceiver from block diagonalization plus water-filling.

Every user's communication precoder lives in the null space of all other
users and all clutter patches, so the rate splits into independent per-stream
terms. A separate sensing direction is the projection of the target steering
vector onto the joint null space. The powers of both parts come from a single
generalized water-filling problem.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.optimize

from ._linalg import herm, null_space, stack_rows
from .metrics import LN2, DigitalSolution, TradeoffWeights
from .model import steering_vector

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


class BdInfeasibleError(ValueError):
    """The null space left for some user is too small for its streams."""


@dataclass
class UserBlock:
    null_basis: np.ndarray
    left: np.ndarray
    gains: np.ndarray
    right: np.ndarray

    @property
    def directions(self):
        """Unit-power communication beams V0 V_BD(:, :N_s), one per column."""
        return self.null_basis @ self.right


@dataclass
class BdDecomposition:
    users: List[UserBlock]
    f_sen: np.ndarray
    d: np.ndarray
    e: np.ndarray
    g: float

    @property
    def gains(self):
        return np.array([u.gains for u in self.users])


@dataclass
class PowerAllocation:
    comm_powers: np.ndarray
    sense_powers: np.ndarray
    water_level: float
    sensing_branch: bool = False

    @property
    def total(self):
        return float(self.comm_powers.sum() + self.sense_powers.sum())


@dataclass
class BdResult:
    solution: DigitalSolution
    decomposition: BdDecomposition
    allocation: PowerAllocation
    cross_term_ratio: float = 0.0
    flags: list = field(default_factory=list)


def null_space_basis(stacked, rtol=RANK_RTOL):
    """Orthonormal basis of the null space of ``stacked``; may have zero width."""
    return null_space(stacked, rtol=rtol)


def _interferers(scenario, k):
    others = [h for j, h in enumerate(scenario.channels) if j != k]
    return others + list(scenario.clutters)


def user_block(scenario, k):
    """Null-space basis and effective-channel SVD for user ``k``."""
    n_s = scenario.dims.n_streams
    blocks = _interferers(scenario, k)
    if blocks:
        v0 = null_space_basis(stack_rows(blocks))
    else:
        v0 = np.eye(scenario.dims.n_tx, dtype=complex)
    if v0.shape[1] < n_s:
        rank = scenario.dims.n_tx - v0.shape[1]
        raise BdInfeasibleError(
            f"user {k}: null space has dimension {v0.shape[1]} = N_t - rank "
            f"({scenario.dims.n_tx} - {rank}) but {n_s} streams are needed"
        )
    u, s, vh = np.linalg.svd(scenario.channels[k] @ v0, full_matrices=True)
    gains = np.zeros(n_s)
    m = min(n_s, s.size)
    gains[:m] = s[:m]
    gains[gains < RANK_RTOL * max(s.max(initial=0.0), 1e-300)] = 0.0
    if u.shape[1] < n_s:
        raise BdInfeasibleError(f"user {k}: {u.shape[1]} receive antennas for {n_s} streams")
    return UserBlock(null_basis=v0, left=u[:, :n_s], gains=gains, right=herm(vh)[:, :n_s])


def comm_precoder(scenario, k, stream_powers):
    """(F_ck, W_k, gains) for the given per-stream powers of user ``k``."""
    blk = user_block(scenario, k)
    p = np.asarray(stream_powers, dtype=float)
    return blk.directions * np.sqrt(p)[None, :], blk.left, blk.gains


def sensing_direction(scenario, rtol=RANK_RTOL):
    """f_sen: the target beam projected off every user and clutter row space.

    Scaled so that f_sen 1^T has unit Frobenius norm; zero when the target
    steering vector already lies in the span of the channels.
    """
    n_t, n_s = scenario.dims.n_tx, scenario.dims.n_streams
    a = steering_vector(n_t, scenario.target_aod)
    blocks = list(scenario.channels) + list(scenario.clutters)
    if blocks:
        # projecting onto the null space is accurate to machine precision;
        # subtracting the row-space component loses digits when the stack
        # is ill conditioned
        v0 = null_space(stack_rows(blocks), rtol=rtol)
        f = v0 @ (herm(v0) @ a)
    else:
        f = a.copy()
    nrm = np.linalg.norm(f)
    if nrm <= 1e-10 * np.linalg.norm(a):
        return np.zeros(n_t, dtype=complex)
    return f / (nrm * np.sqrt(n_s))


def sensing_precoder(scenario):
    """(f_sen, F_sen = f_sen 1^T)."""
    f = sensing_direction(scenario)
    return f, np.outer(f, np.ones(scenario.dims.n_streams))


def scnr_coefficients(users, f_sen, scenario):
    """d (K x N_s), e (K x N_s) and g for the radar beamformer fixed at a_s."""
    a = steering_vector(scenario.dims.n_tx, scenario.target_aod)
    scale = scenario.target_var / scenario.noise_radar
    af = np.vdot(a, f_sen)
    d, e = [], []
    for blk in users:
        ac = herm(blk.directions) @ a
        ac = ac.conj()  # a^H c_i for every column
        d.append(scale * np.abs(ac) ** 2)
        e.append(2.0 * scale * np.real(np.conj(af) * ac))
    g = scale * scenario.dims.n_streams * abs(af) ** 2
    return np.array(d), np.array(e), float(g)


def decompose(scenario):
    users = [user_block(scenario, k) for k in range(scenario.dims.n_users)]
    f_sen = sensing_direction(scenario)
    d, e, g = scnr_coefficients(users, f_sen, scenario)
    return BdDecomposition(users=users, f_sen=f_sen, d=d, e=e, g=g)


def power_objective(comm, sense_total, rho_c, rho_s, w, gains, noise, d, g):
    """Objective of the water-filling problem (rates in bits)."""
    comm = np.asarray(comm, dtype=float)
    snr = (np.asarray(gains) ** 2 / np.asarray(noise)[:, None]) * comm
    rate = np.sum(np.asarray(w)[:, None] * np.log2(1.0 + snr))
    return float(rho_c * rate + rho_s * np.sum(d * comm) + rho_s * g * sense_total)


def _share(total, mask):
    out = np.zeros(mask.shape)
    out[mask] = total / mask.sum()
    return out


def allocate_power(rho_c, rho_s, w, gains, noise, d, g, total_power):
    """Generalized water-filling over stream and sensing powers.

    ``gains`` and ``d`` are K x N_s arrays, ``w`` and ``noise`` length-K. A
    stream whose log term vanishes (zero gain or zero weight) is purely
    linear, just like the sensing power; every linear coordinate shares the
    water level as a lower bound. Sensing power is split evenly over users.
    """
    gains = np.asarray(gains, dtype=float)
    d = np.asarray(d, dtype=float)
    w = np.asarray(w, dtype=float)
    noise = np.asarray(noise, dtype=float)
    K = gains.shape[0]
    if total_power <= 0:
        raise ValueError("total power must be positive")
    if rho_c < 0 or rho_s < 0 or (rho_c == 0 and rho_s == 0):
        raise ValueError("need rho_c, rho_s >= 0, not both zero")

    a = (rho_c * w / LN2)[:, None] * np.ones_like(gains)
    inv_snr = np.full(gains.shape, np.inf)
    pos = gains > 0
    inv_snr[pos] = (noise[:, None] * np.ones_like(gains))[pos] / gains[pos] ** 2
    concave = pos & (a > 0)
    lin = rho_s * d
    sense_value = rho_s * g

    linear_best = sense_value
    if np.any(~concave):
        linear_best = max(linear_best, float(lin[~concave].max()))
    conc_floor = float(lin[concave].max()) if np.any(concave) else -np.inf
    mu_low = max(linear_best, conc_floor)

    def comm_at(mu):
        p = np.zeros(gains.shape)
        gap = mu - lin[concave]
        with np.errstate(divide="ignore", over="ignore"):
            p[concave] = np.maximum(0.0, a[concave] / gap - inv_snr[concave])
        return p

    sense = np.zeros(K)
    branch = False
    if not np.any(concave):
        # linear program: everything to the best coordinate(s)
        mu = linear_best
        comm = np.zeros(gains.shape)
        stream_best = np.isclose(lin, mu, rtol=1e-12, atol=0.0) & ~concave
        if sense_value >= mu or not stream_best.any():
            sense[:] = total_power / K
            branch = True
        else:
            comm = _share(total_power, stream_best)
        return PowerAllocation(comm, sense, float(mu), branch)

    eps = 1e-12 * max(abs(mu_low), 1e-300)
    start = mu_low + eps
    used = comm_at(start).sum()
    if linear_best >= conc_floor and used < total_power:
        mu = linear_best
        comm = comm_at(max(mu, start))
        rest = total_power - comm.sum()
        if sense_value >= linear_best:
            sense[:] = rest / K
            branch = True
        else:
            stream_best = np.isclose(lin, linear_best, rtol=1e-12, atol=0.0) & ~concave
            comm = comm + _share(rest, stream_best)
        return PowerAllocation(comm, sense, float(mu), branch)

    hi = max(start, 1e-300) * 2.0 + float(a.max()) / total_power
    while comm_at(hi).sum() > total_power:
        hi *= 2.0
    mu = scipy.optimize.brentq(
        lambda m: comm_at(m).sum() - total_power, start, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500
    )
    comm = comm_at(mu)
    active = comm > 0
    # brentq leaves a relative mismatch of order 1e-15; absorb it in the active streams
    if active.any():
        comm[active] += (total_power - comm.sum()) / active.sum()
    return PowerAllocation(comm, sense, float(mu), branch)


def cross_term_ratio(alloc, decomp):
    """|sum e sqrt(p p_s)| / (sum d p + g sum p_s): size of the dropped SCNR term."""
    cross = np.sum(decomp.e * np.sqrt(alloc.comm_powers * alloc.sense_powers[:, None]))
    kept = np.sum(decomp.d * alloc.comm_powers) + decomp.g * alloc.sense_powers.sum()
    if kept <= 0:
        return 0.0
    return float(abs(cross) / kept)


def bd_design(scenario, weights=None):
    """Full BD pipeline; see :func:`solve_bd` for the precoder-only view."""
    weights = weights or TradeoffWeights()
    dec = decompose(scenario)
    alloc = allocate_power(
        weights.rho_c,
        weights.rho_s,
        scenario.user_weights,
        dec.gains,
        scenario.noise_user,
        dec.d,
        dec.g,
        scenario.power_budget,
    )
    f_sen = np.outer(dec.f_sen, np.ones(scenario.dims.n_streams))
    precoders = []
    for k, blk in enumerate(dec.users):
        fc = blk.directions * np.sqrt(alloc.comm_powers[k])[None, :]
        precoders.append(fc + np.sqrt(alloc.sense_powers[k]) * f_sen)
    a_s = steering_vector(scenario.dims.n_sensor, scenario.target_aoa)
    sol = DigitalSolution(
        precoders=precoders,
        combiners=[blk.left.copy() for blk in dec.users],
        radar_beamformer=a_s,
    )
    ratio = cross_term_ratio(alloc, dec)
    flags = []
    if ratio > 0.1:
        flags.append("cross-term")
        log.warning("dropped SCNR cross term is %.3g of the kept terms", ratio)
    return BdResult(sol, dec, alloc, ratio, flags)


def solve_bd(scenario, weights=None):
    """Digital transceiver from block diagonalization and water-filling."""
    return bd_design(scenario, weights).solution
