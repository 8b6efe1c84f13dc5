"""Figure rendering for experiment results, written next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .experiments import CLASS_LABELS, ExperimentResult

_SOLVER_STYLE = {
    "oma": dict(color="k", marker="s", linestyle="--"),
    "closed-form": dict(color="tab:blue", marker="o"),
    "conventional": dict(color="tab:gray", marker="v"),
    "sca": dict(color="tab:orange", marker="^"),
    "bb-sra": dict(color="tab:green", marker="d"),
    "bb-sca": dict(color="tab:red", marker="x"),
}


def render(result: ExperimentResult, png_path) -> None:
    if result.spec.mode == "classes":
        _render_classes(result, png_path)
    elif result.spec.mode == "trace":
        _render_trace(result, png_path)
    else:
        _render_power(result, png_path)


def _render_power(result, path):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for solver in result.spec.solvers:
        rows = [r for r in result.rows if r["solver"] == solver]
        x = [r["sweep_value"] for r in rows]
        y = [r["mean_power"] for r in rows]
        err = [2 * r["stderr_power"] for r in rows]
        ax.errorbar(x, y, yerr=err, label=solver, capsize=3, **_SOLVER_STYLE.get(solver, {}))
    ax.set_xlabel(result.spec.sweep_var.replace("_", " "))
    ax.set_ylabel("mean total power (linear, noise-normalised units)")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_classes(result, path):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for lab in CLASS_LABELS:
        rows = [r for r in result.rows if r["class"] == lab]
        ax.plot([r["sweep_value"] for r in rows], [r["frequency"] for r in rows],
                marker="o", label=lab)
    ax.set_xlabel(result.spec.sweep_var.replace("_", " "))
    ax.set_ylabel("frequency of the optimal solution form")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_trace(result, path):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for solver in result.spec.solvers:
        rows = [r for r in result.rows if r["solver"] == solver and r["trial"] == 0]
        x = [r["iteration"] for r in rows]
        ax.plot(x, [r["objective"] for r in rows], label=f"{solver} objective",
                **_SOLVER_STYLE.get(solver, {}))
        lowers = [r["lower"] for r in rows]
        if any(l != "" for l in lowers):
            ax.plot(x, lowers, linestyle=":", color=_SOLVER_STYLE.get(solver, {}).get("color"),
                    label=f"{solver} lower bound")
    ax.set_xlabel("iteration")
    ax.set_ylabel("total power (linear, noise-normalised units)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
