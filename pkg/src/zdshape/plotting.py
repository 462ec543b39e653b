"""SVG figures rendered from the CSV outputs alone."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REF = "#d62728"
SIM = "#1f77b4"

params = {
    "font.size": 8,
    "axes.labelsize": 8,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "zdshape",
    "svg.fonttype": "path",
}


def _read(path):
    arr = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.asarray(arr[k]) for k in arr.dtype.names}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return Path(path)


def landscape(grid_csv, svg_path, optimum=None, minima=None):
    """Heatmap of ``log10 J`` over the stiffness box."""
    d = _read(grid_csv)
    kb, kt = np.unique(d["kb"]), np.unique(d["kt"])
    J = d["J"].reshape(kb.size, kt.size)
    feas = d["feasible"].reshape(kb.size, kt.size).astype(bool)
    Z = np.where(feas, np.log10(np.where(feas, J, 1.0)), np.nan)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(4.2, 3.4), constrained_layout=True)
        im = ax.pcolormesh(kb, kt, Z.T, shading="nearest", cmap="viridis")
        fig.colorbar(im, ax=ax, label=r"$\log_{10} J$")
        if minima:
            m = np.array([(a, b) for a, b, _ in minima])
            ax.plot(m[:, 0], m[:, 1], "w.", ms=4, label="grid local minima")
        if optimum is not None:
            ax.plot(*optimum[:2], "^", color=REF, ms=7, label="optimum")
        ax.set_xlabel(r"$k_b$ [Nm/rad]")
        ax.set_ylabel(r"$k_t$ [Nm/rad]")
        ax.grid(False)
        if minima or optimum is not None:
            ax.legend(loc="upper right")
        return _save(fig, svg_path)


def zero_dynamics(tracking_csv, svg_path):
    """Reference vs zero dynamics: positions, rates, phase plane, errors, feedforward."""
    d = _read(tracking_csv)
    s = d["s"]
    with plt.rc_context(params):
        fig, axs = plt.subplots(2, 3, figsize=(8.0, 4.4), constrained_layout=True)
        a = axs.ravel()
        a[0].plot(s, d["r_x"], color=REF, label=r"$r_x$")
        a[0].plot(s, d["x"], color=SIM, ls="--", label=r"$\bar x$")
        a[0].set_ylabel("x [m]")
        a[0].legend()
        a[1].plot(s, d["rdot_x"], color=REF)
        a[1].plot(s, d["xdot"], color=SIM, ls="--")
        a[1].set_ylabel(r"$\dot x$ [m/s]")
        a[2].plot(d["r_x"], d["rdot_x"], color=REF)
        a[2].plot(d["x"], d["xdot"], color=SIM, ls="--")
        a[2].set_xlabel("x [m]")
        a[2].set_ylabel(r"$\dot x$ [m/s]")
        a[3].plot(s, d["eps1"], color=SIM)
        a[3].set_ylabel(r"$\epsilon_1$ [m]")
        a[4].plot(s, d["eps2"], color=SIM)
        a[4].set_ylabel(r"$\epsilon_2$ [m/s]")
        a[5].plot(s, d["tau"], color=SIM)
        a[5].set_ylabel(r"$\bar\tau$ [Nm]")
        for i in (0, 1, 3, 4, 5):
            a[i].set_xlabel("s [s]")
        for ax, tag in zip(a, "abcdef"):
            ax.set_title(f"({tag})", loc="left")
        return _save(fig, svg_path)


def closed_loop(cl_csv, orbit_csv, svg_path):
    """Output, phase portrait, error, input, orbit distance and joint angles."""
    d = _read(cl_csv)
    o = _read(orbit_csv)
    t = d["t"]
    with plt.rc_context(params):
        fig, axs = plt.subplots(4, 2, figsize=(7.5, 8.0), constrained_layout=True)
        a = axs.ravel()
        a[0].plot(t, d["y"], color=SIM, label="y")
        a[0].plot(t, d["y_ref"], color=REF, ls="--", label=r"$\bar r_y$")
        a[0].set_ylabel("y [m]")
        a[0].legend()
        a[1].plot(t, d["ydot"], color=SIM)
        a[1].set_ylabel(r"$\dot y$ [m/s]")
        a[2].plot(d["x"], d["xdot"], color=SIM, label="closed loop")
        a[2].plot(o["x"], o["xdot"], color=REF, ls="--", label="orbit")
        a[2].set_xlabel("x [m]")
        a[2].set_ylabel(r"$\dot x$ [m/s]")
        a[2].legend()
        a[3].plot(t, d["x"], color=SIM)
        a[3].set_ylabel("x [m]")
        a[4].plot(t, d["e"], color=SIM)
        a[4].set_ylabel("e [m]")
        a[5].plot(t, d["u"], color=SIM)
        a[5].set_ylabel("u [Nm]")
        a[6].semilogy(t, np.maximum(d["d"], 1e-16), color=SIM)
        a[6].set_ylabel(r"$d((x,\dot x),\Gamma_x)$")
        for i in range(4):
            a[7].plot(t, d[f"q{i + 1}"], label=f"$q_{i + 1}$")
        a[7].set_ylabel("q [rad]")
        a[7].legend(ncol=2)
        for i in (0, 1, 3, 4, 5, 6, 7):
            a[i].set_xlabel("t [s]")
        for ax, tag in zip(a, "abcdefgh"):
            ax.set_title(f"({tag})", loc="left")
        return _save(fig, svg_path)


def gain(gain_csv, svg_path):
    """Entries of the periodic Riccati solution over one period."""
    d = _read(gain_csv)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(4.5, 3.0), constrained_layout=True)
        for name in ("P11", "P12", "P13", "P22", "P23", "P33"):
            ax.plot(d["t"], d[name], label=name)
        ax.set_xlabel("t [s]")
        ax.set_ylabel("P(t)")
        ax.legend(ncol=3)
        return _save(fig, svg_path)


def convergence(history_csv, svg_path):
    """Best-so-far cost per iteration."""
    d = _read(history_csv)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(4.0, 2.8), constrained_layout=True)
        ax.semilogy(d["iteration"], d["best"], color=SIM)
        ax.set_xlabel("iteration")
        ax.set_ylabel("best cost")
        return _save(fig, svg_path)


def feasibility(feas_csv, svg_path):
    """Input gain along the reference line with the feasible run shaded."""
    d = _read(feas_csv)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(4.0, 2.8), constrained_layout=True)
        ax.plot(d["x"], np.abs(d["g_y"]), color=SIM)
        ok = d["feasible"].astype(bool)
        if ok.any():
            ax.axvspan(d["x"][ok].min(), d["x"][ok].max(), color="0.9", zorder=0)
        ax.set_yscale("log")
        ax.set_xlabel("x [m]")
        ax.set_ylabel(r"$|g_y|$")
        return _save(fig, svg_path)
