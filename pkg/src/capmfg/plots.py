"""Report figures rendered next to the delimited output.

Everything draws from the exported per-step summary (the CSV content), so
the figures are a plot of the delivered data, not of internal state.  Uses
the Agg backend; no display required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_mfg_figures", "render_planner_figures", "render_loss_figure"]

_RC = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "axes.titlesize": 10,
}


def _fan(ax, t, mean, lo, hi, label):
    ax.fill_between(t, lo, hi, alpha=0.25, label="5-95%")
    ax.plot(t, mean, lw=1.5, label="mean")
    ax.set_title(label)
    ax.set_xlabel("t (years)")
    ax.legend(loc="best", fontsize=7)


def render_mfg_figures(out_path, summary, bounds=None) -> None:
    """Four panels: capacity fan chart, costate (with a-priori band), control, price."""
    t = summary["t"]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(2, 2, figsize=(9, 6), constrained_layout=True)
        _fan(axes[0, 0], t, summary["muX_mean"], summary["muX_p05"], summary["muX_p95"], "mean capacity (MWh)")
        ax = axes[0, 1]
        ax.plot(t, summary["muY_mean"], lw=1.5)
        if bounds is not None:
            y_l, y_u = bounds
            ax.plot(t, y_l, "k--", lw=0.8, label="bounds")
            ax.plot(t, y_u, "k--", lw=0.8)
            ax.legend(loc="best", fontsize=7)
        ax.set_title("mean costate ($/MWh)")
        ax.set_xlabel("t (years)")
        axes[1, 0].plot(t, summary["alpha_mean"], lw=1.5)
        axes[1, 0].axhline(0.0, color="k", lw=0.8)
        axes[1, 0].set_title("mean installation rate (MWh/year)")
        axes[1, 0].set_xlabel("t (years)")
        axes[1, 1].plot(t, summary["price_mean"], lw=1.5)
        axes[1, 1].set_title("mean spot price ($/MWh)")
        axes[1, 1].set_xlabel("t (years)")
        fig.savefig(out_path)
        plt.close(fig)


def render_planner_figures(out_path, summary, subsidy_bound: float) -> None:
    """Six panels: capacity vs demand, field, value, subsidy, control, price."""
    t = summary["t"]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(2, 3, figsize=(12, 6), constrained_layout=True)
        _fan(axes[0, 0], t, summary["muX_mean"], summary["muX_p05"], summary["muX_p95"], "mean capacity (MWh)")
        axes[0, 0].plot(t, summary["D"], "r--", lw=1.0, label="demand")
        axes[0, 0].legend(loc="best", fontsize=7)
        axes[0, 1].plot(t, summary["phi_mean"], lw=1.5)
        axes[0, 1].set_title("decoupling value phi ($/MWh)")
        axes[0, 2].plot(t, summary["V_mean"], lw=1.5)
        axes[0, 2].set_title("planner value ($)")
        ax = axes[1, 0]
        ax.plot(t, summary["v_hat_mean"], lw=1.5)
        for s in (subsidy_bound, -subsidy_bound):
            ax.axhline(s, color="k", ls=":", lw=0.8)
        ax.set_title("subsidy / tax ($/MWh)")
        axes[1, 1].plot(t, summary["alpha_mean"], lw=1.5)
        axes[1, 1].axhline(0.0, color="k", lw=0.8)
        axes[1, 1].set_title("mean installation rate (MWh/year)")
        axes[1, 2].plot(t, summary["price_mean"], lw=1.5)
        axes[1, 2].set_title("mean spot price ($/MWh)")
        for ax in axes.ravel():
            ax.set_xlabel("t (years)")
        fig.savefig(out_path)
        plt.close(fig)


def render_loss_figure(out_path, traces: dict[str, np.ndarray]) -> None:
    """Semilog loss trace(s) over iterations."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
        for label, trace in traces.items():
            ax.semilogy(np.maximum(np.asarray(trace), 1e-300), lw=1.2, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend(loc="best", fontsize=8)
        fig.savefig(out_path)
        plt.close(fig)
