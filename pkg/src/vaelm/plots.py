"""Metric curves from an epoch log as CSV plus one small SVG per metric."""
from __future__ import annotations

import csv
import io
import math
import os
from pathlib import Path
from xml.sax.saxutils import escape

from .estimators import REPORT_FIELDS

CURVE_FIELDS = ("train_loss", "val_loss") + REPORT_FIELDS


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def epoch_rows(records: list[dict]) -> list[dict]:
    return [r for r in records if "val_loss" in r]


def write_csv(records: list[dict], path) -> None:
    rows = epoch_rows(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "phase", *CURVE_FIELDS))
    for r in rows:
        w.writerow((r["epoch"], r["phase"], *(repr(float(r[k])) for k in CURVE_FIELDS)))
    _atomic_write(Path(path), buf.getvalue())


def svg_curve(xs, ys, title: str, width: int = 360, height: int = 220) -> str:
    """Polyline plot with axis extents labelled; no external dependencies."""
    pad = 40
    finite = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="12">'
             f'{escape(title)}</text>']
    if finite:
        x0, x1 = min(x for x, _ in finite), max(x for x, _ in finite)
        y0, y1 = min(y for _, y in finite), max(y for _, y in finite)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def px(x):
            return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

        def py(y):
            return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in finite)
        lines += [
            f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
            'fill="none" stroke="#999"/>',
            f'<polyline points="{pts}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>',
            f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0:g}</text>',
            f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" '
            f'text-anchor="end">{x1:g}</text>',
            f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
            f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
        ]
    lines.append("</svg>\n")
    return "\n".join(lines)


def write_plots(records: list[dict], out_dir) -> list[Path]:
    """``metrics.csv`` and ``<metric>.svg`` for every curve field."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(records, out / "metrics.csv")
    rows = epoch_rows(records)
    paths = [out / "metrics.csv"]
    for key in CURVE_FIELDS:
        p = out / f"{key}.svg"
        _atomic_write(p, svg_curve([r["epoch"] for r in rows],
                                   [float(r[key]) for r in rows], f"{key} vs epoch"))
        paths.append(p)
    return paths
