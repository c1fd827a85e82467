"""Text table and SVG bar chart for marginal channel contributions."""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

from .ablation import MarginalReport


def format_table(report: MarginalReport) -> str:
    rows = [("channel", "marginal", "pairs")]
    for (plane, stat), value, count in zip(report.channels, report.marginal, report.pair_counts):
        rows.append((f"{plane}-{stat}", f"{value:+.4f}", str(count)))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = []
    for j, r in enumerate(rows):
        lines.append(f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}")
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def render_svg(report: MarginalReport, width: int = 560, bar_height: int = 26) -> str:
    """Horizontal bars, one per channel, around a zero line."""
    labels = [f"{p}-{s}" for p, s in report.channels]
    values = list(report.marginal)
    label_w, pad, top = 130, 16, 34
    plot_w = width - label_w - 2 * pad
    height = top + bar_height * len(values) + pad + 18
    lo = min(0.0, *values) if values else 0.0
    hi = max(0.0, *values) if values else 1.0
    span = (hi - lo) or 1.0

    def x(v):
        return label_w + pad + (v - lo) / span * plot_w

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
        f'Mean validation-loss decrease when a channel is added</text>',
    ]
    for i, (name, v) in enumerate(zip(labels, values)):
        y = top + i * bar_height
        x0, x1 = sorted((x(0.0), x(v)))
        colour = "#3b6ea8" if v >= 0 else "#b8463a"
        out.append(f'<text x="{label_w}" y="{y + bar_height * 0.65:.1f}" '
                   f'text-anchor="end">{escape(name)}</text>')
        out.append(f'<rect x="{x0:.1f}" y="{y + 4}" width="{max(x1 - x0, 0.5):.1f}" '
                   f'height="{bar_height - 8}" fill="{colour}"/>')
        out.append(f'<text x="{x1 + 4 if v >= 0 else x0 - 4:.1f}" y="{y + bar_height * 0.65:.1f}" '
                   f'text-anchor="{"start" if v >= 0 else "end"}" font-size="10">{v:+.3f}</text>')
    zx = x(0.0)
    bottom = top + bar_height * len(values)
    out.append(f'<line x1="{zx:.1f}" y1="{top}" x2="{zx:.1f}" y2="{bottom}" stroke="black"/>')
    out.append(f'<text x="{zx:.1f}" y="{bottom + 14}" text-anchor="middle" font-size="10">0</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(report: MarginalReport, out_dir) -> dict:
    """Write ``marginal.json`` and ``marginal.svg``; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / "marginal.json"
    spath = out_dir / "marginal.svg"
    jpath.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    spath.write_text(render_svg(report))
    return {"json": str(jpath), "svg": str(spath)}
