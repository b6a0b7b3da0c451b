"""Monte Carlo experiment runner behind the command line interface.

Every trial draws its own scenario from a seed derived from (seed, trial),
so any trial can be re-run on its own. Within a trial all sweep points share
the scenario and the solver initialization (common random numbers), which
keeps sweep curves free of between-point sampling noise.

Outputs, all CSV with a header row:

* ``results.csv``: one row per (trial, solver, sweep point); convergence
  runs add one row per iteration.
* ``timing.csv``: wall-clock per row, kept apart so results are
  byte-identical between runs.
* ``summary.csv``: mean and sample standard deviation per sweep point.
* ``beampattern_<solver>.csv`` for the beampattern kind.
"""

import csv
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .bcd import calibrate_tradeoff, run_bcd, subspace_basis
from .bd import bd_design
from .hybrid import hybridize
from .metrics import TradeoffWeights, isac_objective, scnr, transmit_beam_pattern, weighted_sum_rate
from .oracle import projected_gradient_reference

log = logging.getLogger(__name__)

# sub-stream labels inside a trial's seed tree
_SCENARIO, _INIT, _CALIB = 0, 1, 2


@dataclass
class ResultRow:
    experiment: str
    trial: int
    solver: str
    power_dbm: float
    eta: float
    n_rf: object = ""
    iteration: object = ""
    wsr: object = ""
    scnr: object = ""
    objective: object = ""
    iterations: object = ""
    converged: object = ""
    error: str = ""
    wall_ms: float = 0.0


RESULT_COLUMNS = [f.name for f in fields(ResultRow) if f.name != "wall_ms"]
TIMING_COLUMNS = ["experiment", "trial", "solver", "power_dbm", "eta", "n_rf", "iteration", "wall_ms"]
SUMMARY_COLUMNS = [
    "experiment",
    "solver",
    "power_dbm",
    "eta",
    "n_rf",
    "iteration",
    "count",
    "wsr_mean",
    "wsr_std",
    "scnr_mean",
    "scnr_std",
    "objective_mean",
    "objective_std",
]


def trial_rng(seed, trial, stream):
    """Generator for one labelled sub-stream of one trial."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, stream)))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


class _Trial:
    """Solver runs for one trial, with per-point caching of shared work."""

    def __init__(self, spec, trial):
        self.spec = spec
        self.trial = trial
        self.scen_seed = np.random.SeedSequence(spec.seed, spawn_key=(trial, _SCENARIO))
        self._scenarios = {}
        self._weights = {}
        self._digital = {}

    def scenario(self, power_dbm):
        if power_dbm not in self._scenarios:
            # the same draw for every power level
            rng = np.random.default_rng(self.scen_seed)
            self._scenarios[power_dbm] = self.spec.scenario.build(rng, power_dbm)
        return self._scenarios[power_dbm]

    def weights(self, power_dbm, eta):
        spec = self.spec
        if spec.cons1 is not None and spec.cons2 is not None:
            return TradeoffWeights(eta, spec.cons1, spec.cons2)
        if power_dbm not in self._weights:
            sc = self.scenario(power_dbm)
            cfg = spec.bcd.to_config(TradeoffWeights())
            cal = calibrate_tradeoff(sc, 0.5, cfg, rng=trial_rng(spec.seed, self.trial, _CALIB))
            self._weights[power_dbm] = (cal.cons1, cal.cons2)
        c1, c2 = self._weights[power_dbm]
        return TradeoffWeights(eta, spec.cons1 or c1, spec.cons2 or c2)

    def digital(self, family, power_dbm, eta):
        key = (family, power_dbm, eta)
        if key not in self._digital:
            sc = self.scenario(power_dbm)
            w = self.weights(power_dbm, eta)
            t0 = time.perf_counter()
            if family == "bcd":
                sol, _, basis = run_bcd(sc, self.spec.bcd.to_config(w), rng=trial_rng(self.spec.seed, self.trial, _INIT))
            elif family == "bd":
                sol, basis = bd_design(sc, w).solution, subspace_basis(sc)
            else:
                sol = projected_gradient_reference(sc, w, rng=trial_rng(self.spec.seed, self.trial, _INIT))
                basis = None
            self._digital[key] = (sol, basis, 1e3 * (time.perf_counter() - t0))
        return self._digital[key]

    def solve(self, solver, power_dbm, eta, n_rf=None):
        """(solution, wall_ms) for one solver at one sweep point."""
        family, _, kind = solver.partition("-")
        if family == "reference":
            sol, _, ms = self.digital("reference", power_dbm, eta)
            return sol, ms
        sol, basis, ms = self.digital(family, power_dbm, eta)
        if kind == "digital":
            return sol, ms
        sc = self.scenario(power_dbm)
        dims = sc.dims
        n_rf_rx = self.spec.n_rf_rx
        if n_rf_rx is None:
            n_rf_rx = dims.n_rx if self.spec.kind == "rf-sweep" else dims.n_rf_rx
        t0 = time.perf_counter()
        res = hybridize(sc, sol, n_rf if n_rf is not None else dims.n_rf_tx, n_rf_rx, basis=basis, config=self.spec.hybrid)
        return res.solution, ms + 1e3 * (time.perf_counter() - t0)


def _row(spec, trial, solver, power, eta, sol=None, sc=None, weights=None, **extra):
    row = ResultRow(spec.kind, trial, solver, float(power), float(eta), **extra)
    if sol is not None:
        row.wsr = float(weighted_sum_rate(sc, sol))
        row.scnr = float(scnr(sc, sol))
        row.objective = float(isac_objective(sc, sol, weights))
        row.iterations = int(sol.iterations)
        row.converged = bool(sol.converged)
        for name in ("wsr", "scnr", "objective"):
            if not math.isfinite(getattr(row, name)):
                raise FloatingPointError(f"non-finite {name}")
    return row


def _points(spec):
    n_rf = spec.n_rf if spec.kind == "rf-sweep" else (None,)
    for power in spec.power_dbm:
        for eta in spec.eta:
            for nrf in n_rf:
                yield power, eta, nrf


def run_trial(spec, trial):
    """All rows of one trial plus any beam-pattern curves."""
    t = _Trial(spec, trial)
    rows, patterns = [], {}
    for power, eta, nrf in _points(spec):
        for solver in spec.solvers:
            extra = {"n_rf": nrf if nrf is not None else ""}
            try:
                sc = t.scenario(power)
                w = t.weights(power, eta)
                sol, ms = t.solve(solver, power, eta, nrf)
                if spec.kind == "convergence":
                    for rec in sol.trace or []:
                        rows.append(
                            ResultRow(
                                spec.kind, trial, solver, float(power), float(eta), extra["n_rf"],
                                rec.iteration, rec.wsr, rec.scnr, rec.objective, sol.iterations, sol.converged,
                            )
                        )
                row = _row(spec, trial, solver, power, eta, sol, sc, w, **extra)
                row.wall_ms = ms
                rows.append(row)
                if spec.kind == "beampattern":
                    patterns[solver] = beampattern_rows(sol, spec.angle_grid())
            except Exception as exc:  # recorded per row; the run goes on
                log.warning("trial %d solver %s failed: %s", trial, solver, exc)
                rows.append(ResultRow(spec.kind, trial, solver, float(power), float(eta), error=f"{type(exc).__name__}: {exc}", **extra))
    return rows, patterns


def beampattern_rows(solution, angles_deg):
    """(angle_deg, user_index, pattern_db); user 0 is the sum over users."""
    theta = np.radians(angles_deg)
    curves = [transmit_beam_pattern(f, theta) for f in solution.precoders]
    curves.insert(0, np.sum(curves, axis=0))
    out = []
    for idx, c in enumerate(curves):
        peak = c.max()
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(c / peak) if peak > 0 else np.full_like(c, -np.inf)
        db = np.maximum(db, -400.0)
        out.extend((float(a), idx, float(v)) for a, v in zip(angles_deg, db))
    return out


def summarize(rows):
    """Mean and sample std of the finite metrics per sweep point."""
    groups = defaultdict(lambda: {"wsr": [], "scnr": [], "objective": []})
    order = []
    for r in rows:
        if r.error:
            continue
        if r.experiment == "convergence" and r.iteration == "":
            continue
        key = (r.experiment, r.solver, r.power_dbm, r.eta, r.n_rf, r.iteration)
        if key not in groups:
            order.append(key)
        for m in ("wsr", "scnr", "objective"):
            groups[key][m].append(float(getattr(r, m)))
    out = []
    for key in order:
        g = groups[key]
        rec = dict(zip(["experiment", "solver", "power_dbm", "eta", "n_rf", "iteration"], key))
        rec["count"] = len(g["wsr"])
        for m in ("wsr", "scnr", "objective"):
            v = np.asarray(g[m])
            rec[f"{m}_mean"] = float(v.mean())
            rec[f"{m}_std"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        out.append(rec)
    return out


@dataclass
class RunOutput:
    rows: list
    summary: list
    patterns: dict
    out_dir: object = None

    @property
    def failed(self):
        return any(r.error for r in self.rows)


class _Writer:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._files = []
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.results = self._open("results.csv", RESULT_COLUMNS)
            self.timing = self._open("timing.csv", TIMING_COLUMNS)

    def _open(self, name, columns):
        fh = open(self.out_dir / name, "w", newline="", encoding="utf-8")
        self._files.append(fh)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        return fh, w

    def write(self, rows):
        if self.out_dir is None:
            return
        for r in rows:
            d = asdict(r)
            self.results[1].writerow([_fmt(d[c]) for c in RESULT_COLUMNS])
            if r.iteration == "" or r.experiment != "convergence":
                self.timing[1].writerow([_fmt(d[c]) for c in TIMING_COLUMNS])
        for fh, _ in (self.results, self.timing):
            fh.flush()

    def close(self):
        for fh in self._files:
            fh.close()


def write_table(path, columns, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in columns])


def run_experiment(spec, out_dir=None):
    """Run every trial of ``spec``; rows are written in trial order as they finish."""
    if spec.kind == "verify":
        from .verify import run_verify

        return run_verify(spec, out_dir)
    writer = _Writer(out_dir)
    rows, patterns = [], {}
    try:
        if spec.workers > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                results = pool.map(run_trial, [spec] * spec.trials, range(spec.trials))
                for r, p in results:
                    writer.write(r)
                    rows.extend(r)
                    patterns.setdefault(0, p)
        else:
            for trial in range(spec.trials):
                r, p = run_trial(spec, trial)
                writer.write(r)
                rows.extend(r)
                patterns.setdefault(0, p)
    finally:
        writer.close()
    summary = summarize(rows)
    pats = patterns.get(0, {})
    if out_dir is not None:
        out = Path(out_dir)
        write_table(out / "summary.csv", SUMMARY_COLUMNS, summary)
        for solver, prow in pats.items():
            recs = [dict(zip(("angle_deg", "user_index", "pattern_db"), p)) for p in prow]
            write_table(out / f"beampattern_{solver}.csv", ["angle_deg", "user_index", "pattern_db"], recs)
    return RunOutput(rows, summary, pats, out_dir)
