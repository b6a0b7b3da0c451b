"""Oracle battery run by ``isac verify``.

Each trial draws a small instance and checks the solvers against
independent references: finite-difference gradients, the subspace property
of the reference solver's output, the scaling identity of the unconstrained
form, the water-filling allocation against a grid search, and the nulling
of the block-diagonalization design.
"""

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ._linalg import crandn
from .bcd import calibrate_tradeoff, solve_bcd, subspace_basis
from .bd import allocate_power, bd_design, power_objective
from .metrics import TradeoffWeights, isac_objective, with_optimal_receivers
from .oracle import (
    analytic_gradients,
    gradient_relative_error,
    numeric_gradients,
    projected_gradient_reference,
    scaling_equivalence_check,
    subspace_residual,
    waterfilling_grid_oracle,
)

log = logging.getLogger(__name__)

THRESHOLDS = {
    "gradient": 1e-5,
    "subspace": 1e-3,
    "scaling": 1e-6,
    "scaling-alpha": 1e-10,
    "waterfilling": 1e-4,
    "waterfilling-power": 1e-8,
    "waterfilling-no-sensing": 0.0,
    "bd-user-nulling": 1e-9,
    "bd-clutter-nulling": 1e-9,
    "reference-vs-bcd": 0.05,
}


@dataclass
class VerifyRow:
    check: str
    trial: int
    value: float
    threshold: float
    passed: bool
    detail: str = ""


COLUMNS = [f.name for f in fields(VerifyRow)]


@dataclass
class VerifyOutput:
    rows: list
    out_dir: object = None

    @property
    def failed(self):
        return not all(r.passed for r in self.rows)

    def by_check(self):
        out = {}
        for r in self.rows:
            out.setdefault(r.check, []).append(r)
        return out


def _row(check, trial, value, detail=""):
    thr = THRESHOLDS[check]
    value = float(value)
    return VerifyRow(check, trial, value, thr, bool(np.isfinite(value) and value <= thr), detail)


def gradient_check(scenario, rng, weights):
    d = scenario.dims
    F = [crandn(rng, (d.n_tx, d.n_streams)) for _ in range(d.n_users)]
    p = sum(np.linalg.norm(f) ** 2 for f in F)
    F = [f * np.sqrt(scenario.power_budget / p) for f in F]
    sol = with_optimal_receivers(scenario, F)
    return gradient_relative_error(analytic_gradients(scenario, sol, weights), numeric_gradients(scenario, sol, weights))


def bd_nulling(scenario, weights):
    """Largest relative leakage into other users and into clutter patches."""
    res = bd_design(scenario, weights)
    users = res.decomposition.users
    comm = [blk.directions * np.sqrt(res.allocation.comm_powers[k])[None, :] for k, blk in enumerate(users)]
    user_leak = 0.0
    for k, fc in enumerate(comm):
        nf = np.linalg.norm(fc)
        if nf == 0:
            continue
        for j, h in enumerate(scenario.channels):
            if j != k:
                user_leak = max(user_leak, np.linalg.norm(h @ fc) / (np.linalg.norm(h, 2) * nf))
    clutter_leak = 0.0
    for f in res.solution.precoders:
        nf = np.linalg.norm(f)
        for b in scenario.clutters:
            if nf > 0:
                clutter_leak = max(clutter_leak, np.linalg.norm(b @ f) / (np.linalg.norm(b, 2) * nf))
    return user_leak, clutter_leak


def random_power_problem(rng, n_vars):
    """Random water-filling instance with ``n_vars`` = K N_s + 1 variables."""
    n_streams = n_vars - 1
    K = int(rng.integers(1, n_streams + 1))
    while n_streams % K:
        K -= 1
    S = n_streams // K
    return dict(
        rho_c=float(rng.uniform(0.2, 2.0)),
        rho_s=float(rng.uniform(0.0, 2.0)),
        w=rng.uniform(0.5, 1.5, K),
        gains=rng.uniform(0.1, 2.0, (K, S)),
        noise=rng.uniform(0.1, 1.0, K),
        d=rng.uniform(0.0, 1.0, (K, S)),
        g=float(rng.uniform(0.0, 2.0)),
        total_power=float(rng.uniform(0.5, 4.0)),
    )


def waterfilling_checks(rng):
    n_vars = int(rng.integers(2, 5))
    prob = random_power_problem(rng, n_vars)
    alloc = allocate_power(**prob)
    args = {k: prob[k] for k in ("rho_c", "rho_s", "w", "gains", "noise", "d", "g")}
    mine = power_objective(alloc.comm_powers, alloc.sense_powers.sum(), **args)
    grid = waterfilling_grid_oracle(total_power=prob["total_power"], points=10**5, **args)
    gap = abs(grid.value - mine) / max(abs(grid.value), 1.0)
    power_gap = abs(alloc.total - prob["total_power"]) / prob["total_power"]
    prob["g"] = 0.0
    no_sense = allocate_power(**prob).sense_powers.sum()
    return n_vars, gap, power_gap, no_sense


def verify_trial(spec, trial):
    ss = np.random.SeedSequence(spec.seed, spawn_key=(trial,))
    scen_rng, init_rng, wf_rng, grad_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    sc = spec.scenario.build(scen_rng, spec.power_dbm[0])
    eta = spec.eta[0]
    if spec.cons1 is not None and spec.cons2 is not None:
        weights = TradeoffWeights(eta, spec.cons1, spec.cons2)
    else:
        weights = calibrate_tradeoff(sc, eta, spec.bcd.to_config(TradeoffWeights()), rng=init_rng)
    rows = [_row("gradient", trial, gradient_check(sc, grad_rng, weights))]

    ref = projected_gradient_reference(sc, weights, rng=init_rng)
    basis = subspace_basis(sc)
    rows.append(_row("subspace", trial, subspace_residual(basis, ref.precoders), f"iterations={ref.iterations}"))
    bcd = solve_bcd(sc, spec.bcd.to_config(weights), rng=init_rng)
    ref_obj = isac_objective(sc, ref, weights)
    bcd_obj = isac_objective(sc, bcd, weights)
    rows.append(_row("reference-vs-bcd", trial, abs(ref_obj - bcd_obj) / max(abs(ref_obj), abs(bcd_obj), 1e-300)))

    rep = scaling_equivalence_check(sc, weights, spec.bcd.to_config(weights), rng=init_rng)
    rows.append(_row("scaling", trial, rep.objective_gap / max(abs(rep.constrained_objective), 1.0)))
    rows.append(_row("scaling-alpha", trial, abs(rep.alpha - rep.alpha_direct) / rep.alpha_direct))

    n_vars, gap, power_gap, no_sense = waterfilling_checks(wf_rng)
    rows.append(_row("waterfilling", trial, gap, f"variables={n_vars}"))
    rows.append(_row("waterfilling-power", trial, power_gap))
    rows.append(_row("waterfilling-no-sensing", trial, no_sense))

    user_leak, clutter_leak = bd_nulling(sc, weights)
    rows.append(_row("bd-user-nulling", trial, user_leak))
    rows.append(_row("bd-clutter-nulling", trial, clutter_leak))
    return rows


def run_verify(spec, out_dir=None):
    rows = []
    fh = writer = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        fh = open(Path(out_dir) / "verify.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
    try:
        for trial in range(spec.trials):
            try:
                trial_rows = verify_trial(spec, trial)
            except Exception as exc:  # a crashing check is a failed check
                log.warning("verify trial %d failed: %s", trial, exc)
                trial_rows = [VerifyRow("error", trial, float("nan"), 0.0, False, f"{type(exc).__name__}: {exc}")]
            rows.extend(trial_rows)
            if writer is not None:
                for r in trial_rows:
                    d = asdict(r)
                    writer.writerow([repr(float(d[c])) if isinstance(d[c], float) else d[c] for c in COLUMNS])
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return VerifyOutput(rows, out_dir)
