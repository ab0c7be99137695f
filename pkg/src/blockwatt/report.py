"""Report construction and rendering.

One canonical report document (a plain dict matching the shipped JSON
schema) is built from a Profile plus run metadata; JSON, CSV and text output
are all derived from it. Rows are sorted by estimated energy, descending;
never-sampled blocks from the block map are listed with a zero count and no
estimates, and unknown-address rows are kept visible.
"""

from __future__ import annotations

import io
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

from blockwatt import __version__
from blockwatt.model import BlockKey, CombinationKey, Profile

CSV_COLUMNS = [
    "key", "label", "n_k", "p_hat", "p_lo", "p_hi",
    "t_hat_s", "t_lo_s", "t_hi_s",
    "pow_hat_w", "pow_s_w", "pow_lo_w", "pow_hi_w",
    "e_hat_j", "e_lo_j", "e_hi_j", "edp", "ed2p",
    "ci_valid", "pow_ci_computable",
]


def build_report(
    profile: Profile,
    alpha: float,
    config_echo: Mapping | None = None,
    labels: Mapping[BlockKey, str] | None = None,
    all_keys: Sequence[BlockKey] | None = None,
    sampler_stats: Mapping | None = None,
    suspect_count: int = 0,
    target_exit_code: int | None = None,
) -> dict:
    """Assemble the canonical report document.

    `all_keys` lists every block known to the block map; ones absent from the
    profile appear as never-sampled rows. Whole-program energy is reported
    both as the sum of per-block estimates and as measured sensor totals,
    with their discrepancy.
    """
    labels = dict(labels or {})

    def label_for(key: CombinationKey) -> str | None:
        if len(key) == 1:
            return labels.get(key.blocks[0])
        parts = [labels.get(b) or str(b) for b in key.blocks]
        return "|".join(parts) if any(labels.get(b) for b in key.blocks) else None

    rows = []
    for est in sorted(
        profile.estimates.values(), key=lambda e: (-e.e_hat, str(e.key))
    ):
        rows.append({
            "key": str(est.key),
            "blocks": [str(b) for b in est.key.blocks],
            "label": label_for(est.key),
            "n_k": est.n_k,
            "p_hat": est.p_hat,
            "p_ci": list(est.p_ci),
            "t_hat_s": est.t_hat,
            "t_ci_s": list(est.t_ci),
            "pow_hat_w": est.pow_hat,
            "pow_s_w": est.pow_s,
            "pow_ci_w": list(est.pow_ci),
            "e_hat_j": est.e_hat,
            "e_ci_j": list(est.e_ci),
            "edp": est.e_hat * est.t_hat,
            "ed2p": est.e_hat * est.t_hat ** 2,
            "ci_valid": est.ci_valid,
            "pow_ci_computable": est.pow_ci_computable,
        })
    sampled = {b for k in profile.estimates for b in k.blocks}
    for key in all_keys or []:
        if key not in sampled:
            rows.append({
                "key": str(key),
                "blocks": [str(key)],
                "label": labels.get(key),
                "n_k": 0,
                "p_hat": None, "p_ci": None,
                "t_hat_s": None, "t_ci_s": None,
                "pow_hat_w": None, "pow_s_w": None, "pow_ci_w": None,
                "e_hat_j": None, "e_ci_j": None,
                "edp": None, "ed2p": None,
                "ci_valid": False, "pow_ci_computable": False,
            })
    e_est = profile.e_total_estimated
    e_meas = profile.e_total_measured
    return {
        "meta": {
            "tool": "blockwatt",
            "version": __version__,
            "t_exec_s": profile.t_exec,
            "n_samples": profile.n,
            "n_obs": profile.n_obs,
            "slots": profile.slots,
            "granularity": profile.granularity,
            "alpha": alpha,
            "suspect_readings": suspect_count,
            "target_exit_code": target_exit_code,
            "config": dict(config_echo or {}),
            "sampler": dict(sampler_stats) if sampler_stats else None,
            "energy": {
                "estimated_j": e_est,
                "measured_j": e_meas,
                "discrepancy_j": e_est - e_meas,
            },
        },
        "domains": [
            {"domain": d.domain, "mean_watts": d.mean_watts, "energy_j": d.energy_j}
            for d in sorted(profile.domain_totals.values(), key=lambda d: d.domain)
        ],
        "blocks": rows,
    }


def render_json(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(doc: dict) -> bytes:
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for row in doc["blocks"]:
        values = {
            "key": row["key"],
            "label": row["label"] or "",
            "n_k": row["n_k"],
            "p_hat": row["p_hat"],
            "p_lo": row["p_ci"][0] if row["p_ci"] else None,
            "p_hi": row["p_ci"][1] if row["p_ci"] else None,
            "t_hat_s": row["t_hat_s"],
            "t_lo_s": row["t_ci_s"][0] if row["t_ci_s"] else None,
            "t_hi_s": row["t_ci_s"][1] if row["t_ci_s"] else None,
            "pow_hat_w": row["pow_hat_w"],
            "pow_s_w": row["pow_s_w"],
            "pow_lo_w": row["pow_ci_w"][0] if row["pow_ci_w"] else None,
            "pow_hi_w": row["pow_ci_w"][1] if row["pow_ci_w"] else None,
            "e_hat_j": row["e_hat_j"],
            "e_lo_j": row["e_ci_j"][0] if row["e_ci_j"] else None,
            "e_hi_j": row["e_ci_j"][1] if row["e_ci_j"] else None,
            "edp": row["edp"],
            "ed2p": row["ed2p"],
            "ci_valid": row["ci_valid"],
            "pow_ci_computable": row["pow_ci_computable"],
        }
        out.write(",".join(_cell(values[c]) for c in CSV_COLUMNS) + "\n")
    return out.getvalue().encode()


def render_text(doc: dict, min_samples: int = 0) -> str:
    """Human-oriented table. `min_samples` hides sub-threshold rows here
    only; JSON and CSV always carry every row."""
    meta = doc["meta"]
    lines = [
        f"blockwatt profile  (t_exec={meta['t_exec_s']:.6g} s, "
        f"n={meta['n_samples']}, granularity={meta['granularity']}, "
        f"alpha={meta['alpha']:g})",
    ]
    if meta["suspect_readings"]:
        lines.append(f"suspect power readings excluded: {meta['suspect_readings']}")
    if meta.get("sampler"):
        ov = meta["sampler"].get("overhead_fraction")
        if ov is not None:
            lines.append(f"sampling overhead: {100 * ov:.3f}% of target time")
    energy = meta["energy"]
    lines.append(
        f"energy: sum of estimates {energy['estimated_j']:.6g} J, "
        f"measured {energy['measured_j']:.6g} J "
        f"(discrepancy {energy['discrepancy_j']:+.3g} J)"
    )
    for d in doc["domains"]:
        lines.append(
            f"  domain {d['domain']}: mean {d['mean_watts']:.4g} W, "
            f"{d['energy_j']:.6g} J"
        )
    header = (
        f"{'block':<40} {'n_k':>7} {'time share':>22} {'time [s]':>10} "
        f"{'power [W]':>20} {'energy [J]':>24} {'flags':>6}"
    )
    lines += ["", header, "-" * len(header)]
    for row in doc["blocks"]:
        if row["n_k"] < min_samples and row["n_k"] > 0:
            continue
        name = row["label"] or row["key"]
        if row["n_k"] == 0:
            lines.append(f"{name:<40} {0:>7} {'never sampled':>22}")
            continue
        p_lo, p_hi = row["p_ci"]
        pw = (
            f"{row['pow_hat_w']:.3f} ±{(row['pow_ci_w'][1] - row['pow_hat_w']):.3f}"
            if row["pow_ci_computable"]
            else f"{row['pow_hat_w']:.3f} (n/a)"
        )
        flags = ("V" if row["ci_valid"] else "-") + (
            "P" if row["pow_ci_computable"] else "-"
        )
        lines.append(
            f"{name:<40} {row['n_k']:>7} "
            f"{row['p_hat']:>8.5f} [{p_lo:.5f},{p_hi:.5f}] "
            f"{row['t_hat_s']:>10.4f} {pw:>20} "
            f"{row['e_hat_j']:>10.4f} [{row['e_ci_j'][0]:.4f},{row['e_ci_j'][1]:.4f}] "
            f"{flags:>6}"
        )
    lines.append("")
    lines.append("flags: V = proportion CI valid, P = power CI computable")
    return "\n".join(lines) + "\n"


def validate_report(doc: dict) -> None:
    """Check a report document against the shipped schema."""
    import jsonschema

    schema_path = Path(__file__).parent / "schemas" / "report.schema.json"
    jsonschema.validate(doc, json.loads(schema_path.read_text()))
