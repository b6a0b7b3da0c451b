"""Plot the summary CSVs written by scripts/run_all.sh (needs matplotlib)."""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def convergence(res, out):
    s = pd.read_csv(res / "convergence" / "summary.csv")
    fig, ax = plt.subplots()
    ax.errorbar(s["iteration"], s["objective_mean"], yerr=s["objective_std"], marker="o", ms=3)
    ax.set(xlabel="iteration", ylabel="objective", title="BCD convergence")
    fig.savefig(out / "convergence.png", dpi=150)


def power_sweep(res, out):
    s = pd.read_csv(res / "power_sweep" / "summary.csv")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for solver, g in s.groupby("solver"):
        axes[0].plot(g["power_dbm"], g["wsr_mean"], marker="o", label=solver)
        axes[1].plot(g["power_dbm"], g["scnr_mean"], marker="o", label=solver)
    axes[0].set(xlabel="P_t [dBm]", ylabel="WSR [bit/s/Hz]")
    axes[1].set(xlabel="P_t [dBm]", ylabel="SCNR", yscale="log")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out / "power_sweep.png", dpi=150)


def rf_sweep(res, out):
    s = pd.read_csv(res / "rf_sweep" / "summary.csv")
    fig, ax = plt.subplots()
    for (solver, eta), g in s.groupby(["solver", "eta"]):
        ax.plot(g["n_rf"], g["objective_mean"], marker="o", label=f"{solver}, eta={eta}")
    ax.set(xlabel="transmit RF chains", ylabel="objective")
    ax.legend()
    fig.savefig(out / "rf_sweep.png", dpi=150)


def tradeoff(res, out):
    s = pd.read_csv(res / "tradeoff_region" / "summary.csv")
    fig, ax = plt.subplots()
    for power, g in s.groupby("power_dbm"):
        ax.plot(g["scnr_mean"], g["wsr_mean"], marker="o", label=f"{power} dBm")
    ax.set(xlabel="SCNR", ylabel="WSR [bit/s/Hz]", title="trade-off region")
    ax.legend()
    fig.savefig(out / "tradeoff_region.png", dpi=150)


def beampattern(res, out):
    for path in sorted((res / "beampattern").glob("beampattern_*.csv")):
        b = pd.read_csv(path)
        fig, ax = plt.subplots()
        for user, g in b.groupby("user_index"):
            ax.plot(g["angle_deg"], g["pattern_db"], label="overall" if user == 0 else f"user {user}")
        ax.set(xlabel="angle [deg]", ylabel="pattern [dB]", ylim=(-120, 3), title=path.stem)
        ax.legend()
        fig.savefig(out / f"{path.stem}.png", dpi=150)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--results", default="results")
    p.add_argument("--out", default="results/plots")
    args = p.parse_args()
    res, out = Path(args.results), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fn in (convergence, power_sweep, rf_sweep, tradeoff, beampattern):
        try:
            fn(res, out)
        except FileNotFoundError as exc:
            print(f"skipping {fn.__name__}: {exc}")


if __name__ == "__main__":
    main()
