"""Hybrid analog/digital factorization on the product of complex circles.

The digital factor is eliminated by exact least squares, so the analog
matrix Z alone is optimized on the manifold {|Z_ij| = 1} by Riemannian
conjugate gradients with an Armijo line search. Several starting points are
tried: the SVD-phase construction, and (when the RF budget allows) the
phases of the propagation-path steering vectors, which span the optimal
precoder exactly.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ._linalg import herm
from .metrics import DigitalSolution, max_scnr_beamformer, mmse_combiners

log = logging.getLogger(__name__)


@dataclass
class HybridConfig:
    max_iter: int = 200
    rel_tol: float = 1e-8
    grad_tol: float = 1e-7
    armijo_step: float = 1.0
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    armijo_max_backtracks: int = 30
    path_seeds: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_shrink must lie in (0, 1)")


@dataclass
class HybridFactors:
    analog: np.ndarray
    digital: List[np.ndarray]
    residual: float
    objective_trace: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    seed: str = "svd"

    def precoders(self):
        return [self.analog @ b for b in self.digital]

    @property
    def relative_residual(self):
        return self.residual


class HybridError(RuntimeError):
    pass


def unit_modulus(m):
    """Entry-wise phase of ``m``; zero entries map to phase 0."""
    m = np.asarray(m, dtype=complex)
    mag = np.abs(m)
    out = np.ones_like(m)
    nz = mag > 0
    out[nz] = m[nz] / mag[nz]
    return out


def _ls_digital(z, target):
    return np.linalg.lstsq(z, target, rcond=None)[0]


def _residual(z, target):
    b = _ls_digital(z, target)
    r = target - z @ b
    return float(np.real(np.vdot(r, r))), b, r


def _rescale(analog, digital, references):
    """Per-user scaling so each hybrid precoder keeps the digital power."""
    out = []
    for b, f in zip(digital, references):
        hyb = np.linalg.norm(analog @ b)
        ref = np.linalg.norm(f)
        out.append(b * (ref / hyb) if hyb > 0 else b)
    return out


def svd_phase_analog(stacked, n_rf):
    """exp(j angle(U(:, :n_rf))) from the ordered SVD of the stacked precoder."""
    u = np.linalg.svd(stacked, full_matrices=True)[0]
    if n_rf > u.shape[1]:
        raise ValueError(f"n_rf={n_rf} exceeds {u.shape[1]} antennas")
    return unit_modulus(u[:, :n_rf])


def init_hybrid(precoders, n_rf):
    """SVD-phase analog matrix with power-restoring least-squares digital part."""
    if n_rf < 1:
        raise ValueError("n_rf must be >= 1")
    precoders = [np.atleast_2d(f) for f in precoders]
    stacked = np.hstack(precoders)
    z = svd_phase_analog(stacked, n_rf)
    digital = [_ls_digital(z, f) for f in precoders]
    digital = _rescale(z, digital, precoders)
    return HybridFactors(z, digital, relative_error(z, digital, precoders), seed="svd")


def relative_error(analog, digital, references):
    num = sum(np.linalg.norm(f - analog @ b) ** 2 for f, b in zip(references, digital))
    den = sum(np.linalg.norm(f) ** 2 for f in references)
    return float(np.sqrt(num / den)) if den > 0 else 0.0


def riemannian_grad(z, egrad):
    """Project a Euclidean gradient onto the tangent space of the circle product."""
    return egrad - np.real(egrad * z.conj()) * z


def retract(z):
    return z / np.abs(z)


def optimize_analog(z0, target, config=None):
    """Minimize ||target - Z pinv(Z) target||^2 over unit-modulus Z.

    Returns (Z, objective trace, Riemannian gradient norms). The Euclidean
    gradient with respect to conj(Z) is -(target - Z B) B^H at the exact
    least-squares B; we use twice that, the real-gradient convention.
    """
    config = config or HybridConfig()
    scale = np.linalg.norm(target)
    if scale == 0:
        return z0.copy(), [0.0], [0.0]
    t = target / scale
    z = retract(z0.astype(complex))

    def cost_grad(zz):
        f, b, r = _residual(zz, t)
        if not np.isfinite(f):
            raise HybridError("non-finite residual in analog optimization")
        return f, riemannian_grad(zz, -2.0 * r @ herm(b))

    f, g = cost_grad(z)
    trace, gnorms = [f], [float(np.linalg.norm(g))]
    g0 = max(gnorms[0], 1e-300)
    d = -g
    step = config.armijo_step
    for _ in range(config.max_iter):
        if gnorms[-1] <= config.grad_tol * g0 or f <= 1e-30:
            break
        slope = float(np.real(np.vdot(g, d)))
        if slope >= 0:
            d, slope = -g, -gnorms[-1] ** 2
        # steps are measured against a direction with unit RMS entry
        dn = d / (np.linalg.norm(d) / np.sqrt(d.size))
        slope_n = slope / (np.linalg.norm(d) / np.sqrt(d.size))
        alpha = min(config.armijo_step, 2.0 * step)
        for _ in range(config.armijo_max_backtracks):
            zn = retract(z + alpha * dn)
            fn = _residual(zn, t)[0]
            if fn <= f + config.armijo_slope * alpha * slope_n:
                break
            alpha *= config.armijo_shrink
        else:
            break
        step = alpha
        fn, gn = cost_grad(zn)
        # Polak-Ribiere+ with transport by projection
        g_old = riemannian_grad(zn, g)
        d_old = riemannian_grad(zn, d)
        beta = max(0.0, float(np.real(np.vdot(gn, gn - g_old))) / max(gnorms[-1] ** 2, 1e-300))
        d = -gn + beta * d_old
        rel = abs(f - fn) / max(f, 1e-300)
        z, f, g = zn, fn, gn
        trace.append(f)
        gnorms.append(float(np.linalg.norm(g)))
        if rel < config.rel_tol:
            break
    return z, [v * scale**2 for v in trace], gnorms


def _pad(cols, target, n_rf):
    """Fill the remaining RF chains with phases of the unexplained directions."""
    cols = unit_modulus(cols)
    extra = n_rf - cols.shape[1]
    if extra <= 0:
        return cols[:, :n_rf]
    resid = target - cols @ _ls_digital(cols, target)
    u = np.linalg.svd(resid if np.linalg.norm(resid) > 0 else target, full_matrices=True)[0]
    return np.hstack([cols, unit_modulus(u[:, :extra])])


def _seeds(stacked, n_rf, basis, config):
    yield "svd", svd_phase_analog(stacked, n_rf)
    n_t = stacked.shape[0]
    if n_rf == n_t:
        m = np.arange(n_t)
        yield "dft", np.exp(2j * np.pi * np.outer(m, m) / n_t)
    if basis is None or not config.path_seeds:
        return
    for name, comm_only, nulled in (("paths", False, False), ("paths-no-clutter", False, True), ("user-paths", True, True)):
        try:
            cols = path_columns(basis, clutter_nulled=nulled, comm_only=comm_only)
        except ValueError:
            continue
        if cols.shape[1] <= n_rf:
            yield name, _pad(cols, stacked, n_rf)


def factorize_hybrid(precoders, n_rf, config=None, basis=None):
    """Hybrid approximation of the digital precoders with ``n_rf`` RF chains.

    With ``basis`` given, the steering-vector seeds of the RF-chain
    sufficiency construction are tried alongside the SVD-phase start and the
    best result is kept.
    """
    config = config or HybridConfig()
    precoders = [np.atleast_2d(f) for f in precoders]
    stacked = np.hstack(precoders)
    if n_rf < 1 or n_rf > stacked.shape[0]:
        raise ValueError(f"n_rf={n_rf} must lie in [1, {stacked.shape[0]}]")
    best = None
    for name, z0 in _seeds(stacked, n_rf, basis, config):
        z, trace, gnorms = optimize_analog(z0, stacked, config)
        digital = _rescale(z, [_ls_digital(z, f) for f in precoders], precoders)
        err = relative_error(z, digital, precoders)
        cand = HybridFactors(z, digital, err, trace, gnorms, seed=name)
        if best is None or err < best.residual:
            best = cand
        if err <= 1e-12:
            break
    return best


def factorize_combiner(combiner, n_rf_rx, config=None):
    """(W_RF, W_BB) approximating one user's combiner; no power constraint."""
    config = config or HybridConfig()
    w = np.atleast_2d(combiner)
    if n_rf_rx < 1 or n_rf_rx > w.shape[0]:
        raise ValueError(f"n_rf_rx={n_rf_rx} must lie in [1, {w.shape[0]}]")
    best = None
    for name, z0 in _seeds(w, n_rf_rx, None, config):
        z, trace, gnorms = optimize_analog(z0, w, config)
        bb = _ls_digital(z, w)
        err = relative_error(z, [bb], [w])
        if best is None or err < best.residual:
            best = HybridFactors(z, [bb], err, trace, gnorms, seed=name)
    return best


def path_columns(basis, clutter_nulled=False, comm_only=False):
    """Columns of the subspace basis kept by the sufficiency construction.

    ``clutter_nulled`` drops the clutter AoDs (the radar receiver already
    removes clutter); ``comm_only`` also drops the target AoD.
    """
    v = basis.basis
    n_u, n_c = basis.n_user_paths, basis.n_clutter
    if basis.is_identity:
        raise ValueError("identity basis carries no path structure")
    keep = list(range(n_u))
    if basis.has_target and not comm_only:
        keep.append(n_u)
    if not clutter_nulled:
        start = n_u + int(basis.has_target)
        keep.extend(range(start, start + n_c))
    return v[:, keep]


def sufficient_rf_analog(basis, n_rf, clutter_nulled=False, comm_only=False, fill=None):
    """Unit-modulus analog matrix [phases of V | padding] with n_rf columns."""
    cols = unit_modulus(path_columns(basis, clutter_nulled, comm_only))
    need = cols.shape[1]
    if n_rf < need:
        raise ValueError(f"n_rf={n_rf} is below the {need} paths the construction needs")
    extra = n_rf - need
    if extra == 0:
        return cols
    if fill is None:
        rng = np.random.default_rng(0)
        fill = np.exp(2j * np.pi * rng.random((cols.shape[0], extra)))
    return np.hstack([cols, unit_modulus(fill[:, :extra])])


@dataclass
class HybridResult:
    solution: DigitalSolution
    precoder: HybridFactors
    combiners: List[HybridFactors]


def hybridize(scenario, solution, n_rf_tx=None, n_rf_rx=None, basis=None, config=None):
    """Hybrid transceiver derived from a digital one.

    The precoders are factorized first; the combiners are then the MMSE
    filters for the hybrid precoders, factorized in turn, and the radar
    beamformer is the SCNR maximizer for the hybrid precoders.
    """
    dims = scenario.dims
    n_rf_tx = dims.n_rf_tx if n_rf_tx is None else n_rf_tx
    n_rf_rx = dims.n_rf_rx if n_rf_rx is None else n_rf_rx
    fac = factorize_hybrid(solution.precoders, n_rf_tx, config, basis=basis)
    precoders = fac.precoders()
    comb_fac, combiners = [], []
    for w in mmse_combiners(scenario, precoders):
        cf = factorize_combiner(w, n_rf_rx, config)
        comb_fac.append(cf)
        combiners.append(cf.analog @ cf.digital[0])
    sol = DigitalSolution(
        precoders=precoders,
        combiners=combiners,
        radar_beamformer=max_scnr_beamformer(scenario, np.hstack(precoders)),
        objective_trace=list(solution.objective_trace),
        converged=solution.converged,
        iterations=solution.iterations,
    )
    return HybridResult(sol, fac, comb_fac)
