"""Problem instances: array responses, sparse mmWave channels, radar scene.

A :class:`Scenario` bundles everything the solvers need: user channels
``H_k``, the target response ``A``, clutter responses ``B_i``, noise powers,
power budget and user weights, together with the path angles that generated
them (the angles are needed by the subspace-reduced solver).

All randomness flows through a single :class:`numpy.random.Generator`, split
into one child stream per entity class (users, target, clutter) so that adding
clutter patches does not perturb the user channels.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ._linalg import crandn, db2lin, dbm2watt, herm

HALF_PI = np.pi / 2


@dataclass(frozen=True)
class SystemDims:
    n_tx: int = 64
    n_rx: int = 4
    n_streams: int = 2
    n_users: int = 5
    n_rf_tx: int = 10
    n_rf_rx: int = 2
    n_sensor: int = 16
    n_clutter: int = 2

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_streams", "n_users", "n_rf_tx", "n_rf_rx", "n_sensor"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_clutter < 0:
            raise ValueError(f"n_clutter must be non-negative, got {self.n_clutter}")
        if not self.n_users * self.n_streams <= self.n_rf_tx <= self.n_tx:
            raise ValueError(
                f"need n_users*n_streams <= n_rf_tx <= n_tx, got "
                f"{self.n_users}*{self.n_streams}, {self.n_rf_tx}, {self.n_tx}"
            )
        if not self.n_streams <= self.n_rf_rx <= self.n_rx:
            raise ValueError(
                f"need n_streams <= n_rf_rx <= n_rx, got "
                f"{self.n_streams}, {self.n_rf_rx}, {self.n_rx}"
            )


@dataclass(frozen=True)
class PathSpec:
    gain_variance: float
    aod: float
    aoa: float

    def __post_init__(self):
        if self.gain_variance < 0:
            raise ValueError("gain_variance must be non-negative")
        for a in (self.aod, self.aoa):
            if not -HALF_PI - 1e-12 <= a <= HALF_PI + 1e-12:
                raise ValueError(f"angle {a} outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class ChannelGenParams:
    n_paths_per_user: int = 3
    pathloss_intercept: float = 61.4
    pathloss_exponent: float = 2.0
    shadowing_std: float = 5.8
    rician_offset: float = 7.0
    carrier_hz: float = 28e9

    def __post_init__(self):
        if self.n_paths_per_user < 1:
            raise ValueError("n_paths_per_user must be >= 1")
        if self.pathloss_exponent <= 0:
            raise ValueError("pathloss_exponent must be positive")
        if self.shadowing_std < 0:
            raise ValueError("shadowing_std must be non-negative")


@dataclass(frozen=True)
class Geometry:
    """Positions (metres) and optional fixed angles (radians).

    Angles left as ``None`` are drawn uniformly from [-pi/2, pi/2]. User
    distances for path loss come from ``ue_distances`` or are drawn from
    ``ue_distance_range``. If ``target_pos`` is given, the target angles are
    derived from the BS and radar positions instead of being drawn.
    """

    bs_pos: tuple = (20.0, 30.0)
    radar_pos: tuple = (15.0, 15.0)
    ue_distance_range: tuple = (20.0, 80.0)
    ue_distances: Optional[tuple] = None
    ue_aods: Optional[tuple] = None
    target_pos: Optional[tuple] = None
    target_aod: Optional[float] = None
    target_aoa: Optional[float] = None
    clutter_aods: Optional[tuple] = None
    clutter_aoas: Optional[tuple] = None


@dataclass(frozen=True)
class LinkBudget:
    power_dbm: float = 30.0
    noise_dbm: float = -90.0
    target_to_noise_db: float = 20.0
    clutter_to_noise_db: float = 40.0
    user_weights: Optional[tuple] = None


@dataclass(frozen=True, eq=False)
class Scenario:
    dims: SystemDims
    channels: tuple
    target: np.ndarray
    clutters: tuple
    ue_aods: tuple
    ue_aoas: tuple
    target_aod: float
    target_aoa: float
    clutter_aods: tuple
    clutter_aoas: tuple
    noise_user: np.ndarray
    noise_radar: float
    power_budget: float
    user_weights: np.ndarray
    target_var: float
    clutter_vars: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        d = self.dims
        if len(self.channels) != d.n_users:
            raise ValueError(f"expected {d.n_users} channels, got {len(self.channels)}")
        for h in self.channels:
            if h.shape != (d.n_rx, d.n_tx):
                raise ValueError(f"channel shape {h.shape} != {(d.n_rx, d.n_tx)}")
        if self.target.shape != (d.n_sensor, d.n_tx):
            raise ValueError(f"target shape {self.target.shape} != {(d.n_sensor, d.n_tx)}")
        if len(self.clutters) != d.n_clutter:
            raise ValueError(f"expected {d.n_clutter} clutter matrices, got {len(self.clutters)}")
        for b in self.clutters:
            if b.shape != (d.n_sensor, d.n_tx):
                raise ValueError(f"clutter shape {b.shape} != {(d.n_sensor, d.n_tx)}")
        if np.any(np.asarray(self.noise_user) <= 0) or self.noise_radar <= 0:
            raise ValueError("noise powers must be positive")
        if self.power_budget <= 0:
            raise ValueError("power budget must be positive")
        if np.any(np.asarray(self.user_weights) < 0):
            raise ValueError("user weights must be non-negative")

    @property
    def n_paths(self):
        return sum(len(a) for a in self.ue_aods) + self.dims.n_clutter + 1

    def stacked(self, include_target=True):
        """All response matrices stacked vertically (users, target, clutter)."""
        blocks = list(self.channels)
        if include_target:
            blocks.append(self.target)
        blocks.extend(self.clutters)
        return np.vstack(blocks)

    def with_power(self, power_budget):
        return replace(self, power_budget=float(power_budget))

    def with_weights(self, user_weights):
        return replace(self, user_weights=np.asarray(user_weights, dtype=float))


def steering_vector(n, angle):
    """Unit-norm half-wavelength ULA response: exp(j*pi*m*sin(angle))/sqrt(n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = np.arange(n)
    return np.exp(1j * np.pi * m * np.sin(angle)) / np.sqrt(n)


def steering_matrix(n, angles):
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    return np.exp(1j * np.pi * np.outer(np.arange(n), np.sin(angles))) / np.sqrt(n)


def path_gain_variance(distance, params, is_los, shadowing_db=0.0):
    """Large-scale power of one path: 10^(-kappa/10), with the NLOS offset."""
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    kappa = params.pathloss_intercept + 10.0 * params.pathloss_exponent * np.log10(distance)
    kappa += shadowing_db
    if not is_los:
        kappa += params.rician_offset
    return float(10.0 ** (-0.1 * kappa))


def path_gain_sample(rng, distance, params, is_los):
    """Draw one complex path gain (log-normal shadowing, Rayleigh amplitude)."""
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    shadow = params.shadowing_std * rng.standard_normal()
    var = path_gain_variance(distance, params, is_los, shadowing_db=shadow)
    return complex(crandn(rng, (), var))


def generate_user_channel(rng, dims, path_specs, gains=None):
    """Saleh-Valenzuela channel sum_l beta_l a_r(aoa_l) a_t(aod_l)^H."""
    path_specs = list(path_specs)
    if not path_specs:
        raise ValueError("at least one path is required")
    if gains is None:
        gains = [complex(crandn(rng, (), p.gain_variance)) for p in path_specs]
    if len(gains) != len(path_specs):
        raise ValueError(f"{len(gains)} gains for {len(path_specs)} paths")
    at = steering_matrix(dims.n_tx, [p.aod for p in path_specs])
    ar = steering_matrix(dims.n_rx, [p.aoa for p in path_specs])
    return (ar * np.asarray(gains)) @ herm(at)


def response_matrix(var, aoa, aod, n_rx, n_tx):
    """Rank-one radar response sqrt(var) a_rx(aoa) a_tx(aod)^H."""
    if var < 0:
        raise ValueError("variance must be non-negative")
    return np.sqrt(var) * np.outer(steering_vector(n_rx, aoa), steering_vector(n_tx, aod).conj())


def angle_from(origin, point):
    """Angle of ``point`` seen from a ULA at ``origin`` (broadside = +y)."""
    dx = point[0] - origin[0]
    dy = point[1] - origin[1]
    d = np.hypot(dx, dy)
    if d == 0:
        raise ValueError("coincident positions")
    return float(np.arcsin(dx / d))


def _uniform_angles(rng, n):
    return rng.uniform(-HALF_PI, HALF_PI, size=n)


def build_scenario(rng, dims=None, gen=None, geometry=None, budget=None):
    """Draw a full problem instance.

    Deterministic for a given generator state. ``rng`` may be a Generator or
    anything accepted by :func:`numpy.random.default_rng`.
    """
    dims = dims or SystemDims()
    gen = gen or ChannelGenParams()
    geometry = geometry or Geometry()
    budget = budget or LinkBudget()
    rng = np.random.default_rng(rng)
    user_rng, target_rng, clutter_rng = rng.spawn(3)

    K, L, I = dims.n_users, gen.n_paths_per_user, dims.n_clutter
    if geometry.ue_aods is not None and len(geometry.ue_aods) != K:
        raise ValueError(f"ue_aods has {len(geometry.ue_aods)} entries for {K} users")
    if geometry.ue_distances is not None and len(geometry.ue_distances) != K:
        raise ValueError(f"ue_distances has {len(geometry.ue_distances)} entries for {K} users")
    for name in ("clutter_aods", "clutter_aoas"):
        val = getattr(geometry, name)
        if val is not None and len(val) != I:
            raise ValueError(f"{name} has {len(val)} entries for {I} clutter patches")

    channels, ue_aods, ue_aoas = [], [], []
    lo, hi = geometry.ue_distance_range
    if not 0 < lo <= hi:
        raise ValueError(f"bad ue_distance_range {geometry.ue_distance_range}")
    for k in range(K):
        aods = _uniform_angles(user_rng, L)
        aoas = _uniform_angles(user_rng, L)
        dist = user_rng.uniform(lo, hi)
        if geometry.ue_aods is not None:
            aods[0] = geometry.ue_aods[k]
        if geometry.ue_distances is not None:
            dist = geometry.ue_distances[k]
        gains = [path_gain_sample(user_rng, dist, gen, is_los=(l == 0)) for l in range(L)]
        specs = [PathSpec(0.0, float(aods[l]), float(aoas[l])) for l in range(L)]
        channels.append(generate_user_channel(user_rng, dims, specs, gains=gains))
        ue_aods.append(aods)
        ue_aoas.append(aoas)

    noise = float(dbm2watt(budget.noise_dbm))
    target_var = noise * float(db2lin(budget.target_to_noise_db))
    if geometry.target_pos is not None:
        target_aod = angle_from(geometry.bs_pos, geometry.target_pos)
        target_aoa = angle_from(geometry.radar_pos, geometry.target_pos)
    else:
        target_aod, target_aoa = _uniform_angles(target_rng, 2)
    if geometry.target_aod is not None:
        target_aod = geometry.target_aod
    if geometry.target_aoa is not None:
        target_aoa = geometry.target_aoa
    target = response_matrix(target_var, target_aoa, target_aod, dims.n_sensor, dims.n_tx)

    clutter_aods = _uniform_angles(clutter_rng, I)
    clutter_aoas = _uniform_angles(clutter_rng, I)
    if geometry.clutter_aods is not None:
        clutter_aods = np.asarray(geometry.clutter_aods, dtype=float)
    if geometry.clutter_aoas is not None:
        clutter_aoas = np.asarray(geometry.clutter_aoas, dtype=float)
    # uniform split: every patch carries the mean clutter-to-noise ratio
    clutter_vars = np.full(I, noise * float(db2lin(budget.clutter_to_noise_db)))
    clutters = tuple(
        response_matrix(clutter_vars[i], clutter_aoas[i], clutter_aods[i], dims.n_sensor, dims.n_tx)
        for i in range(I)
    )

    weights = np.ones(K) if budget.user_weights is None else np.asarray(budget.user_weights, float)
    if weights.shape != (K,):
        raise ValueError(f"user_weights must have {K} entries")

    return Scenario(
        dims=dims,
        channels=tuple(channels),
        target=target,
        clutters=clutters,
        ue_aods=tuple(ue_aods),
        ue_aoas=tuple(ue_aoas),
        target_aod=float(target_aod),
        target_aoa=float(target_aoa),
        clutter_aods=tuple(float(a) for a in clutter_aods),
        clutter_aoas=tuple(float(a) for a in clutter_aoas),
        noise_user=np.full(K, noise),
        noise_radar=noise,
        power_budget=float(dbm2watt(budget.power_dbm)),
        user_weights=weights,
        target_var=target_var,
        clutter_vars=clutter_vars,
    )


def scenario_from_matrices(
    channels: Sequence[np.ndarray],
    target: np.ndarray,
    clutters: Sequence[np.ndarray] = (),
    *,
    n_streams=1,
    noise_user=1.0,
    noise_radar=1.0,
    power_budget=1.0,
    user_weights=None,
    ue_aods=None,
    ue_aoas=None,
    target_aod=0.0,
    target_aoa=0.0,
    clutter_aods=None,
    clutter_aoas=None,
    target_var=1.0,
    clutter_vars=None,
):
    """Wrap explicit matrices into a :class:`Scenario` (mostly for tests).

    Dimension checks on RF chains are relaxed by setting them to their
    maxima, since hand-built instances rarely care about the hybrid layer.
    """
    channels = [np.atleast_2d(np.asarray(h, dtype=complex)) for h in channels]
    target = np.atleast_2d(np.asarray(target, dtype=complex))
    clutters = [np.atleast_2d(np.asarray(b, dtype=complex)) for b in clutters]
    K = len(channels)
    n_rx, n_tx = channels[0].shape
    dims = SystemDims(
        n_tx=n_tx,
        n_rx=n_rx,
        n_streams=n_streams,
        n_users=K,
        n_rf_tx=n_tx,
        n_rf_rx=n_rx,
        n_sensor=target.shape[0],
        n_clutter=len(clutters),
    )
    noise_user = np.broadcast_to(np.asarray(noise_user, dtype=float), (K,)).copy()
    return Scenario(
        dims=dims,
        channels=tuple(channels),
        target=target,
        clutters=tuple(clutters),
        ue_aods=tuple(np.atleast_1d(a) for a in (ue_aods or [[0.0]] * K)),
        ue_aoas=tuple(np.atleast_1d(a) for a in (ue_aoas or [[0.0]] * K)),
        target_aod=float(target_aod),
        target_aoa=float(target_aoa),
        clutter_aods=tuple(clutter_aods or [0.0] * len(clutters)),
        clutter_aoas=tuple(clutter_aoas or [0.0] * len(clutters)),
        noise_user=noise_user,
        noise_radar=float(noise_radar),
        power_budget=float(power_budget),
        user_weights=np.ones(K) if user_weights is None else np.asarray(user_weights, float),
        target_var=float(target_var),
        clutter_vars=np.asarray(clutter_vars if clutter_vars is not None else [1.0] * len(clutters)),
    )


def format_complex_csv(m):
    """Row-major CSV of a complex matrix, each cell as "re,im" (quoted)."""
    m = np.atleast_2d(m)
    lines = []
    for row in m:
        lines.append(",".join(f'"{float(z.real)!r},{float(z.imag)!r}"' for z in row.astype(complex)))
    return "\n".join(lines) + "\n"


def parse_complex_csv(text):
    import csv
    import io

    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row:
            continue
        vals = []
        for cell in row:
            re, im = cell.split(",")
            vals.append(complex(float(re), float(im)))
        rows.append(vals)
    return np.array(rows, dtype=complex)


def dump_scenario(scenario, out_dir):
    """Write every realized matrix of ``scenario`` to ``out_dir`` as CSV."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    items = [(f"H_{k + 1}", h) for k, h in enumerate(scenario.channels)]
    items.append(("A", scenario.target))
    items.extend((f"B_{i + 1}", b) for i, b in enumerate(scenario.clutters))
    for name, m in items:
        path = out / f"{name}.csv"
        path.write_text(format_complex_csv(m))
        written.append(path)
    return written
