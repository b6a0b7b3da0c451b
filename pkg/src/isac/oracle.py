"""Independent checks for the solvers.

Closed-form gradients of the scalarized objective, finite differences,
KKT residuals, a projected-gradient solver that works on the full precoder
without any subspace reduction, the power-normalization identity, and a
brute-force search for the water-filling problem.

Complex gradients follow the Wirtinger convention d f / d conj(F), which for
a real f equals (df/dRe F + j df/dIm F) / 2.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ._linalg import crandn, herm, projector
from .bcd import (
    BcdConfig,
    initial_state,
    normalization_factor,
    power_scale,
    reduced_objective,
    run_bcd,
    subspace_basis,
)
from .metrics import (
    LN2,
    DigitalSolution,
    isac_objective,
    with_optimal_receivers,
)

log = logging.getLogger(__name__)


class SingularZError(ValueError):
    """A covariance matrix seen after some user's combiner is singular."""


def _covariances(scenario, precoders, k, combiner):
    """(Z_k, Z~_k): total and interference-plus-noise covariance after W_k."""
    h = scenario.channels[k]
    wh = herm(combiner)
    noise = scenario.noise_user[k] * (wh @ combiner)
    own = wh @ h @ precoders[k]
    others = noise.copy()
    for j, f in enumerate(precoders):
        if j != k:
            t = wh @ h @ f
            others = others + t @ herm(t)
    return others + own @ herm(own), others


def _inv(m):
    try:
        return np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise SingularZError("singular covariance after combiner") from exc


def rate_gradients(scenario, solution):
    """grads[i][k] = d R_i / d conj(F_k) in bits, receivers held fixed."""
    K = scenario.dims.n_users
    F = solution.precoders
    out = []
    for i in range(K):
        h, w = scenario.channels[i], solution.combiners[i]
        z, zt = _covariances(scenario, F, i, w)
        zi, zti = _inv(z), _inv(zt)
        row = []
        for k in range(K):
            mid = zi if k == i else zi - zti
            row.append(herm(h) @ w @ mid @ herm(w) @ h @ F[k] / LN2)
        out.append(row)
    return out


def scnr_gradients(scenario, solution):
    """d SCNR / d conj(F_k) for every k, radar beamformer held fixed."""
    w = solution.radar_beamformer
    F = solution.precoders
    aw = (herm(scenario.target) @ w)[:, None]
    bws = [(herm(b) @ w)[:, None] for b in scenario.clutters]
    f1 = sum(float(np.linalg.norm(herm(aw) @ f) ** 2) for f in F)
    f2 = scenario.noise_radar * float(np.real(np.vdot(w, w)))
    f2 += sum(float(np.linalg.norm(herm(bw) @ f) ** 2) for bw in bws for f in F)
    grads = []
    for f in F:
        g1 = aw @ (herm(aw) @ f)
        g2 = sum((bw @ (herm(bw) @ f) for bw in bws), np.zeros_like(f))
        grads.append((f2 * g1 - f1 * g2) / f2**2)
    return grads


def analytic_gradients(scenario, solution, weights):
    """d/d conj(F_k) of rho_c WSR + rho_s SCNR with W_k and w held fixed."""
    K = scenario.dims.n_users
    total = [np.zeros_like(f, dtype=complex) for f in solution.precoders]
    if weights.rho_c != 0:
        rg = rate_gradients(scenario, solution)
        for i in range(K):
            wi = scenario.user_weights[i]
            if wi == 0:
                continue
            for k in range(K):
                total[k] = total[k] + weights.rho_c * wi * rg[i][k]
    if weights.rho_s != 0:
        for k, g in enumerate(scnr_gradients(scenario, solution)):
            total[k] = total[k] + weights.rho_s * g
    return total


def _with_precoders(solution, precoders):
    return DigitalSolution(
        precoders=precoders,
        combiners=solution.combiners,
        radar_beamformer=solution.radar_beamformer,
    )


def numeric_gradients(scenario, solution, weights, step=1e-6, relative=True):
    """Central differences on the real and imaginary part of every entry."""
    F = [np.array(f, dtype=complex) for f in solution.precoders]
    scale = max(np.linalg.norm(np.hstack(F)) / np.sqrt(np.hstack(F).size), 1e-300) if relative else 1.0
    h = step * scale

    def obj(precoders):
        return isac_objective(scenario, _with_precoders(solution, precoders), weights)

    grads = []
    for k, fk in enumerate(F):
        g = np.zeros_like(fk)
        for idx in np.ndindex(fk.shape):
            parts = []
            for delta in (h, 1j * h):
                plus = [f.copy() for f in F]
                minus = [f.copy() for f in F]
                plus[k][idx] += delta
                minus[k][idx] -= delta
                parts.append((obj(plus) - obj(minus)) / (2 * h))
            g[idx] = 0.5 * (parts[0] + 1j * parts[1])
        grads.append(g)
    return grads


def gradient_relative_error(a, b):
    num = np.sqrt(sum(np.linalg.norm(x - y) ** 2 for x, y in zip(a, b)))
    den = np.sqrt(sum(np.linalg.norm(y) ** 2 for y in b))
    return float(num / den) if den > 0 else float(num)


@dataclass
class KktReport:
    stationarity_residual: float
    relative_residual: float
    dual_lambda: float
    power_slack: float
    is_trivial_point: bool
    gradient_scale: float


def is_trivial_point(scenario, precoders, rtol=1e-9):
    """Every user channel and the target response annihilate the precoder."""
    fn = max(np.linalg.norm(np.hstack(precoders)), 1e-300)
    scale = max(np.linalg.norm(h) for h in list(scenario.channels) + [scenario.target])
    hits = [np.linalg.norm(h @ f) for h, f in zip(scenario.channels, precoders)]
    hits += [np.linalg.norm(scenario.target @ f) for f in precoders]
    return bool(max(hits) <= rtol * scale * fn)


def kkt_report(scenario, solution, weights, reoptimize_receivers=True):
    """Stationarity of the Lagrangian in F with a least-squares dual variable.

    With optimal receivers the gradient of the objective with the receivers
    held fixed equals the gradient of the receiver-optimized objective, so
    the stationarity condition reads G_k = lambda F_k for every user.
    """
    if reoptimize_receivers:
        solution = with_optimal_receivers(scenario, solution.precoders)
    F = solution.precoders
    G = analytic_gradients(scenario, solution, weights)
    fnorm2 = sum(float(np.linalg.norm(f) ** 2) for f in F)
    lam = sum(float(np.real(np.vdot(f, g))) for f, g in zip(F, G)) / fnorm2 if fnorm2 > 0 else 0.0
    res = max(float(np.linalg.norm(g - lam * f)) for f, g in zip(F, G))
    gscale = float(np.sqrt(sum(np.linalg.norm(g) ** 2 for g in G)))
    return KktReport(
        stationarity_residual=res,
        relative_residual=res / gscale if gscale > 0 else 0.0,
        dual_lambda=lam,
        power_slack=scenario.power_budget - fnorm2,
        is_trivial_point=is_trivial_point(scenario, F),
        gradient_scale=gscale,
    )


@dataclass
class ReferenceConfig:
    max_iter: int = 2000
    tol: float = 1e-12
    step: float = 0.5
    shrink: float = 0.5
    max_backtracks: int = 50
    min_step: float = 1e-6
    max_step: float = 1e6


def _project_ball(precoders, budget):
    p = sum(float(np.linalg.norm(f) ** 2) for f in precoders)
    if p <= budget:
        return precoders
    c = np.sqrt(budget / p)
    return [c * f for f in precoders]


def _optimal_objective(scenario, precoders, weights):
    sol = with_optimal_receivers(scenario, precoders)
    return isac_objective(scenario, sol, weights), sol


def _real_inner(a, b):
    return sum(float(np.real(np.vdot(x, y))) for x, y in zip(a, b))


def projected_gradient_reference(scenario, weights, config=None, rng=None, init=None):
    """Gradient ascent on the full precoder, projected onto the power ball.

    Receivers are re-optimized at every iterate (MMSE combiners, maximum-SCNR
    radar beamformer), so the gradient with receivers fixed is the gradient
    of the receiver-optimized objective. Trial steps are Barzilai-Borwein
    (spectral) lengths, shortened by backtracking until the objective does
    not decrease; the best iterate is returned.
    """
    config = config or ReferenceConfig()
    d = scenario.dims
    if init is None:
        rng = np.random.default_rng(rng)
        init = [crandn(rng, (d.n_tx, d.n_streams)) for _ in range(d.n_users)]
    p0 = sum(float(np.linalg.norm(f) ** 2) for f in init)
    F = [f * np.sqrt(scenario.power_budget / p0) for f in init]
    obj, sol = _optimal_objective(scenario, F, weights)
    G = analytic_gradients(scenario, sol, weights)
    gn = np.sqrt(_real_inner(G, G))
    # first trial moves F by a fraction of its own norm
    step = config.step * np.sqrt(scenario.power_budget) / max(gn, 1e-300)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        if not np.isfinite(gn):
            raise FloatingPointError("non-finite gradient in reference solver")
        if gn == 0:
            converged = True
            break
        t = step
        accepted = False
        for _ in range(config.max_backtracks):
            cand = _project_ball([f + t * g for f, g in zip(F, G)], scenario.power_budget)
            new_obj, new_sol = _optimal_objective(scenario, cand, weights)
            if not np.isfinite(new_obj):
                raise FloatingPointError("non-finite objective in reference solver")
            if new_obj >= obj:
                accepted = True
                break
            t *= config.shrink
        if not accepted:
            converged = True
            break
        G_new = analytic_gradients(scenario, new_sol, weights)
        s_vec = [a - b for a, b in zip(cand, F)]
        y_vec = [a - b for a, b in zip(G_new, G)]
        sy = _real_inner(s_vec, y_vec)
        ss = _real_inner(s_vec, s_vec)
        # ascent: curvature along s is -sy; keep a positive length
        scale = np.sqrt(scenario.power_budget) / max(np.sqrt(_real_inner(G_new, G_new)), 1e-300)
        if sy < 0:
            step = float(np.clip(ss / -sy, config.min_step * scale, config.max_step * scale))
        else:
            step = config.step * scale
        rel = (new_obj - obj) / max(abs(obj), 1e-300)
        F, obj, sol, G = cand, new_obj, new_sol, G_new
        gn = np.sqrt(_real_inner(G, G))
        trace.append(obj)
        if 0 <= rel < config.tol and ss < (config.tol * scenario.power_budget):
            converged = True
            break
    sol.objective_trace = trace
    sol.converged = converged
    sol.iterations = it
    return sol


def subspace_residual(basis, precoders):
    """||(I - P_V) F||_F / ||F||_F for the stacked precoder."""
    F = np.hstack(precoders)
    p = projector(basis.basis)
    nrm = np.linalg.norm(F)
    return float(np.linalg.norm(F - p @ F) / nrm) if nrm > 0 else 0.0


@dataclass
class ScalingReport:
    alpha: float
    alpha_direct: float
    unconstrained_objective: float
    constrained_objective: float
    renormalized_objective: float
    combiner_gap: float
    radar_gap: float

    @property
    def objective_gap(self):
        return abs(self.unconstrained_objective - self.constrained_objective)


def _subspace_gap(a, b):
    """Distance between the column spaces of a and b (projector difference)."""
    return float(np.linalg.norm(projector(a) - projector(b)))


def scaling_equivalence_check(scenario, weights, config=None, rng=0):
    """Compare the unconstrained run, its normalization and a renormalized run.

    Both runs start from the same point. The renormalized run rescales X to
    full power after every sweep; its receivers and objective must agree
    with the plain run's up to the scale equivariance of the iterates.
    """
    config = config or BcdConfig(weights=weights)
    config = BcdConfig(tol=config.tol, max_iter=config.max_iter, weights=weights)
    basis = subspace_basis(scenario)
    init = initial_state(scenario, basis, rng)
    sol, state, _ = run_bcd(scenario, config, init=init, basis=basis)
    alpha = normalization_factor(state, scenario)
    direct = float(np.sqrt(scenario.power_budget / power_scale(state)))
    unconstrained = reduced_objective(state, scenario, weights)[0]
    constrained = isac_objective(scenario, sol, weights)

    renorm_cfg = BcdConfig(tol=config.tol, max_iter=config.max_iter, weights=weights, renormalize_each_sweep=True)
    sol2, state2, _ = run_bcd(scenario, renorm_cfg, init=init, basis=basis)
    renorm = isac_objective(scenario, sol2, weights)
    comb_gap = max(_subspace_gap(a, b) for a, b in zip(sol.combiners, sol2.combiners))
    w1, w2 = sol.radar_beamformer, sol2.radar_beamformer
    radar_gap = float(np.linalg.norm(np.outer(w1, w1.conj()) / np.vdot(w1, w1) - np.outer(w2, w2.conj()) / np.vdot(w2, w2)))
    return ScalingReport(alpha, direct, unconstrained, constrained, renorm, comb_gap, radar_gap)


def power_problem_value(comm, sense_total, rho_c, rho_s, w, gains, noise, d, g):
    """Water-filling objective, written out term by term."""
    total = 0.0
    K, S = np.shape(gains)
    for k in range(K):
        for i in range(S):
            p = comm[k][i]
            snr = gains[k][i] ** 2 * p / noise[k]
            total += rho_c * w[k] * np.log2(1.0 + snr) + rho_s * d[k][i] * p
    return total + rho_s * g * sense_total


@dataclass
class GridResult:
    comm: np.ndarray
    sense_total: float
    value: float
    evaluations: int = 0
    history: List[float] = field(default_factory=list)


def _simplex_grid(n, m):
    """All compositions of m into n non-negative parts, as fractions."""
    if n == 1:
        return np.ones((1, 1))
    pts = []
    for cut in itertools.combinations(range(m + n - 1), n - 1):
        c = np.array((-1,) + cut + (m + n - 1,))
        pts.append(np.diff(c) - 1)
    return np.array(pts, dtype=float) / m


def _grid_size(n, m):
    from math import comb

    return comb(m + n - 1, n - 1)


def waterfilling_grid_oracle(rho_c, rho_s, w, gains, noise, d, g, total_power, points=10**6, rounds=6):
    """Exhaustive simplex grid followed by zoomed re-gridding around the best point.

    Variables are every stream power plus the total sensing power (the
    objective only sees the sum of the per-user sensing powers). Every
    evaluation is vectorized over the grid.
    """
    gains = np.asarray(gains, dtype=float)
    d = np.asarray(d, dtype=float)
    w = np.asarray(w, dtype=float)
    noise = np.asarray(noise, dtype=float)
    K, S = gains.shape
    n = K * S + 1
    if n > 5:
        raise ValueError(f"{n} variables is too many for an exhaustive grid")
    coef_log = np.repeat(rho_c * w, S)
    snr = (gains**2 / noise[:, None]).ravel()
    lin = np.append(rho_s * d.ravel(), rho_s * g)

    def value(P):
        comm = P[:, :-1]
        return np.sum(coef_log * np.log2(1.0 + snr * comm), axis=1) + P @ lin

    m = 1
    while _grid_size(n, m + 1) <= points:
        m += 1
    grid = _simplex_grid(n, m) * total_power
    vals = value(grid)
    best = int(np.argmax(vals))
    x, v = grid[best], float(vals[best])
    evals, hist = grid.shape[0], [v]
    width = total_power / m
    for _ in range(rounds):
        # local box of +-2 cells around the incumbent, projected back to the simplex
        m_loc = max(4, int(round(points ** (1.0 / max(n - 1, 1)))))
        offs = np.linspace(-2 * width, 2 * width, m_loc + 1)
        mesh = np.array(list(itertools.product(offs, repeat=n - 1))) if n > 1 else np.zeros((1, 0))
        if mesh.shape[0] > points:
            mesh = mesh[:: int(np.ceil(mesh.shape[0] / points))]
        cand = np.empty((mesh.shape[0], n))
        cand[:, :-1] = x[:-1] + mesh
        cand[:, -1] = total_power - cand[:, :-1].sum(axis=1)
        ok = np.all(cand >= 0, axis=1)
        cand = cand[ok]
        if cand.size:
            vals = value(cand)
            j = int(np.argmax(vals))
            if vals[j] > v:
                x, v = cand[j], float(vals[j])
            evals += cand.shape[0]
        hist.append(v)
        width = 4 * width / m_loc
    return GridResult(x[:-1].reshape(K, S), float(x[-1]), v, evals, hist)
