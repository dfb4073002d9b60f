"""Evaluation report serialisation and stacked-bar SVG composition charts.

The SVG writer is deliberately dependency-free and byte-deterministic so
that repeated runs with one seed produce identical artifacts.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .metrics import EvaluationReport

_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
            "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd", "#5a9bd4", "#f2a354")

REPORT_FIELDS = ["context", "NMI_B", "NMI_M", "HS_B", "HS_M", "S",
                 "D_D", "D_D_std", "D_I", "D_I_std", "D_score",
                 "d_zero_flag", "singleton_clusters"]


def report_row(report: EvaluationReport) -> list:
    return [json.dumps(report.context, sort_keys=True),
            f"{report.nmi_b:.6f}", f"{report.nmi_m:.6f}",
            f"{report.hs_b:.6f}", f"{report.hs_m:.6f}", f"{report.s:.6f}",
            f"{report.d_d:.6f}", f"{report.d_d_std:.6f}",
            f"{report.d_i:.6f}", f"{report.d_i_std:.6f}", f"{report.d:.6f}",
            report.d_zero_flag, report.singleton_clusters]


def write_report_csv(reports: list[EvaluationReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow(report_row(r))


def write_report_json(report: EvaluationReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json())


def composition_svg(composition: list[dict], target: str, path: str | Path,
                    width: int = 900, height: int = 320) -> None:
    """One stacked bar per cluster; segment heights are mixture ratios."""
    categories = sorted({cat for entry in composition for cat in entry.get(target, {})})
    color = {cat: _PALETTE[i % len(_PALETTE)] for i, cat in enumerate(categories)}
    margin_l, margin_b, margin_t = 40, 30, 30
    legend_w = 150
    plot_w = width - margin_l - legend_w
    plot_h = height - margin_b - margin_t
    n = max(len(composition), 1)
    bar_w = plot_w / n

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{margin_l}" y="18" font-size="13" font-family="sans-serif">'
             f'Cluster mixture by {target}</text>']
    for i, entry in enumerate(composition):
        x = margin_l + i * bar_w
        y = margin_t
        for cat in categories:
            frac = entry.get(target, {}).get(cat, 0.0)
            if frac <= 0:
                continue
            h = frac * plot_h
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(bar_w - 2, 1):.2f}" '
                f'height="{h:.2f}" fill="{color[cat]}"/>')
            y += h
        if n <= 60:
            parts.append(
                f'<text x="{x + bar_w / 2:.2f}" y="{height - margin_b + 14}" '
                f'font-size="9" font-family="sans-serif" text-anchor="middle">'
                f'{entry["cluster"]}</text>')
    lx = margin_l + plot_w + 12
    for i, cat in enumerate(categories):
        ly = margin_t + i * 18
        parts.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{color[cat]}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly + 10}" font-size="10" '
                     f'font-family="sans-serif">{cat}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def write_composition_csv(composition: list[dict], targets: list[str],
                          path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "size"] + [f"{t}_mix" for t in targets])
        for entry in composition:
            row = [entry["cluster"], entry["size"]]
            for t in targets:
                row.append(json.dumps(entry.get(t, {}), sort_keys=True))
            w.writerow(row)


def write_cluster_sizes(composition: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "size"])
        for entry in composition:
            w.writerow([entry["cluster"], entry["size"]])
