"""Matplotlib figures rendered next to the delimited report output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_profile_figures(doc: dict, outdir: str | Path, top: int = 20) -> list[Path]:
    """Energy-by-block and time-share charts for a profile report document."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [r for r in doc["blocks"] if r["n_k"] > 0][:top]
    if not rows:
        return []
    names = [r["label"] or r["key"] for r in rows][::-1]
    e = np.array([r["e_hat_j"] for r in rows])[::-1]
    e_lo = np.array([r["e_ci_j"][0] for r in rows])[::-1]
    e_hi = np.array([r["e_ci_j"][1] for r in rows])[::-1]
    paths = []

    fig, ax = plt.subplots(figsize=(8, max(3, 0.35 * len(rows) + 1.5)))
    ax.barh(names, e, xerr=[e - e_lo, e_hi - e], capsize=3, color="#4878cf")
    ax.set_xlabel("estimated energy [J]")
    ax.set_title(f"Top blocks by energy (t_exec = {doc['meta']['t_exec_s']:.4g} s)")
    fig.tight_layout()
    p = outdir / "energy_by_block.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    p_hat = np.array([r["p_hat"] for r in rows])[::-1]
    p_lo = np.array([r["p_ci"][0] for r in rows])[::-1]
    p_hi = np.array([r["p_ci"][1] for r in rows])[::-1]
    fig, ax = plt.subplots(figsize=(8, max(3, 0.35 * len(rows) + 1.5)))
    ax.barh(names, p_hat, xerr=[p_hat - p_lo, p_hi - p_hat], capsize=3, color="#6acc64")
    ax.set_xlabel("estimated time share")
    ax.set_xlim(0, 1)
    ax.set_title("Execution-time share with confidence intervals")
    fig.tight_layout()
    p = outdir / "time_share.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths


def render_simulation_figures(summary_doc: dict, outdir: str | Path) -> list[Path]:
    """Per-block energy error and CI coverage charts for a simulation run."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    per_key = summary_doc.get("per_key", [])
    if per_key:
        names = [r["key"] for r in per_key]
        errs = [100.0 * r["mare_e"] for r in per_key]
        fig, ax = plt.subplots(figsize=(8, max(3, 0.3 * len(names) + 1.5)))
        ax.barh(names[::-1], errs[::-1], color="#d65f5f")
        ax.set_xlabel("mean absolute relative energy error [%]")
        ax.set_title(
            f"Estimator error vs. ground truth "
            f"({summary_doc['replications']} replications)"
        )
        fig.tight_layout()
        p = outdir / "energy_error_by_block.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)

    cov = summary_doc.get("coverage")
    if cov:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        labels = ["time share", "power", "energy"]
        values = [100.0 * cov["p"], 100.0 * cov["pow"], 100.0 * cov["e"]]
        ax.bar(labels, values, color=["#4878cf", "#6acc64", "#d65f5f"])
        nominal = 100.0 * (1.0 - summary_doc["alpha"])
        ax.axhline(nominal, ls="--", c="k", lw=1, label=f"nominal {nominal:g}%")
        ax.set_ylabel("empirical CI coverage [%]")
        ax.set_ylim(0, 105)
        ax.legend()
        fig.tight_layout()
        p = outdir / "ci_coverage.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths
