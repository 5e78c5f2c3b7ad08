"""Writers for experiment outputs: CSV tables, JSON summaries, log-log data
files and matplotlib figures.

Floats are written with ``repr`` so files round-trip exactly and identical
runs produce identical bytes.
"""

import csv
import json
import math
import os

import numpy as np

CONVERGENCE_COLUMNS = ["scheme", "h", "n_paths", "mean_sup_sq_error", "rms_error", "std_err", "wall_ms"]


def _num(x):
    return repr(float(x))


def write_convergence_csv(report, path, timings=False):
    """One row per (scheme, h). ``wall_ms`` is left empty unless ``timings``
    is set, keeping the file a pure function of the seed."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CONVERGENCE_COLUMNS)
        for e in report.estimates:
            out.writerow([e.scheme, _num(e.h), e.n_paths, _num(e.mean_sup_sq_error), _num(e.rms_error),
                          _num(e.std_err), f"{e.wall_ms:.1f}" if timings else ""])


def read_convergence_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_loglog_data(report, directory):
    """Per scheme, a two-column ``log2h log2rms`` file for external plotting."""
    paths = []
    for scheme in report.fits or {e.scheme for e in report.estimates}:
        path = os.path.join(directory, f"loglog_{scheme}.dat")
        with open(path, "w") as fh:
            fh.write("# log2h log2rms\n")
            for e in report.estimates_for(scheme):
                log_rms = math.log2(e.rms_error) if e.rms_error > 0 else -math.inf
                fh.write(f"{_num(math.log2(e.h))} {_num(log_rms)}\n")
        paths.append(path)
    return paths


def write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_chain_stats_csv(reports, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["q", "h", "n_intervals", "quantity", "empirical", "std_err", "bound", "slack", "passed"])
        for rep in reports:
            for r in rep.rows:
                out.writerow([_num(rep.max_rate), _num(rep.h), rep.n_intervals, r.quantity, _num(r.empirical),
                              _num(r.std_err), _num(r.bound), _num(r.slack), int(r.passed)])


def write_trajectory_csv(traj, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "regime"] + [f"Y{i + 1}" for i in range(traj.values.shape[1])])
        for t, r, y in zip(traj.times, traj.regimes, traj.values):
            out.writerow([_num(t), int(r)] + [_num(v) for v in y])


def write_jumps_csv(chain, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["time", "to_state"])
        for t, s in zip(chain.jump_times, chain.jump_states):
            out.writerow([_num(t), int(s)])


def write_moment_csv(report, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["h", "mean_sup_sq_scheme", "std_err_scheme", "mean_sq_modulus", "std_err_modulus"])
        for h, (m, se), (md, mse) in zip(report.steps, report.scheme_moment, report.modulus):
            out.writerow([_num(h), _num(m), _num(se), _num(md), _num(mse)])


# ------------------------------------------------------------------ figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({
        "font.size": 9,
        "axes.labelsize": 9,
        "legend.fontsize": 8,
        "figure.figsize": (4.8, 3.6),
        "savefig.dpi": 150,
    })
    return plt


def plot_convergence(report, path):
    """RMS strong error against h on log2 axes with fitted slopes and a
    slope-one guide."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    for scheme in sorted({e.scheme for e in report.estimates}):
        rows = [e for e in report.estimates_for(scheme) if e.rms_error > 0]
        if not rows:
            continue
        h = np.array([e.h for e in rows])
        rms = np.array([e.rms_error for e in rows])
        err = np.array([e.rms_std_err for e in rows])
        label = scheme
        if scheme in report.fits:
            label += f" (slope {report.fits[scheme].slope:.3f})"
        ax.errorbar(h, rms, yerr=2 * err, marker="o", ms=3, capsize=2, label=label)
    h = np.array(sorted({e.h for e in report.estimates}))
    top = max(e.rms_error for e in report.estimates) or 1.0
    ax.plot(h, top * h / h[-1], "k--", lw=0.8, label="order 1")
    ax.plot(h, top * np.sqrt(h / h[-1]), "k:", lw=0.8, label="order 1/2")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("step size h")
    ax.set_ylabel(r"RMS of $\sup_n |X_n - Y_n|$")
    ax.set_title(report.problem)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_chain_stats(report, path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    tails = [r for r in report.rows if r.quantity.startswith("P(")]
    x = np.arange(len(tails))
    ax.bar(x - 0.2, [r.empirical for r in tails], width=0.4, label="empirical")
    ax.bar(x + 0.2, [r.bound for r in tails], width=0.4, label=r"bound $(qh)^N$")
    ax.set_xticks(x, [r.quantity for r in tails])
    if all(r.bound > 0 for r in tails):
        ax.set_yscale("log")
    ax.set_title(f"jump counts, q={report.max_rate:g}, h={report.h:g}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_trajectory(traj, path):
    plt = _pyplot()
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [3, 1]})
    for i in range(traj.values.shape[1]):
        top.plot(traj.times, traj.values[:, i], lw=0.9, label=f"Y{i + 1}")
    top.set_ylabel("state")
    top.legend()
    bottom.step(traj.times, traj.regimes, where="post", color="k", lw=0.9)
    bottom.set_ylabel("regime")
    bottom.set_xlabel("t")
    top.set_title(f"{traj.scheme}, h={traj.h:g}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
