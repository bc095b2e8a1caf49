"""Self-contained SVG line plots of sweep results.

Each panel is a ``<g class="panel">`` carrying its axis mapping as data
attributes. A value ``(x, y)`` is drawn at::

    px = left + (x - x0) / (x1 - x0) * width
    py = top + (y1 - y) / (y1 - y0) * height

so any coordinate can be inverted back to data units.
"""
import csv
import math
from xml.sax.saxutils import escape

from lbl.models import MODEL_KINDS

RESULT_FIELDS = ["scale", "snr_db", "model", "signal_r2_train", "signal_r2_test",
                 "noise_r2_train", "noise_r2_test", "train_s", "eval_s"]
PANELS = [
    ("signal_r2_train", "Signal R2 (train)"),
    ("signal_r2_test", "Signal R2 (test)"),
    ("noise_r2_train", "Noise R2 (train)"),
    ("noise_r2_test", "Noise R2 (test)"),
]
COLORS = {"vae": "#d62728", "ar": "#ff7f0e", "jepa": "#1f77b4", "vjepa": "#17becf", "bjepa": "#9467bd"}
PANEL_W, PANEL_H = 300.0, 200.0
MARGIN = 50.0


class ResultsFormatError(ValueError):
    pass


def _num(text, lineno, name):
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise ResultsFormatError(f"line {lineno}: column {name!r} is not a number: {text!r}") from None


def read_results(path):
    """Parse a sweep CSV into a list of row dicts; errors name the offending line."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ResultsFormatError("line 1: empty results file")
    if rows[0] != RESULT_FIELDS:
        raise ResultsFormatError(f"line 1: unexpected header {rows[0]}")
    if len(rows) == 1:
        raise ResultsFormatError("line 2: results file has no data rows")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(RESULT_FIELDS):
            raise ResultsFormatError(f"line {lineno}: expected {len(RESULT_FIELDS)} fields, got {len(row)}")
        rec = dict(zip(RESULT_FIELDS, row))
        if rec["model"] not in MODEL_KINDS:
            raise ResultsFormatError(f"line {lineno}: unknown model {rec['model']!r}")
        for k in RESULT_FIELDS:
            if k != "model":
                rec[k] = _num(rec[k], lineno, k)
        if rec["scale"] is None:
            raise ResultsFormatError(f"line {lineno}: missing scale")
        out.append(rec)
    return out


def _fmt(v):
    return f"{v:.3f}"


def _panel(rows, key, title, left, top, x0, x1, y0, y1):
    parts = [f'<g class="panel" data-key="{key}" data-left="{left}" data-top="{top}" '
             f'data-width="{PANEL_W}" data-height="{PANEL_H}" data-x0="{x0!r}" data-x1="{x1!r}" '
             f'data-y0="{y0!r}" data-y1="{y1!r}">']
    parts.append(f'<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" '
                 'fill="none" stroke="#444"/>')
    parts.append(f'<text x="{left + PANEL_W / 2}" y="{top - 8}" text-anchor="middle" '
                 f'font-size="13">{escape(title)}</text>')
    for tick in range(5):
        yv = y0 + (y1 - y0) * tick / 4
        py = top + (y1 - yv) / (y1 - y0) * PANEL_H
        parts.append(f'<text x="{left - 6}" y="{_fmt(py + 4)}" text-anchor="end" font-size="10">{yv:.2f}</text>')
    for xv in sorted({r["scale"] for r in rows}):
        px = left + (xv - x0) / (x1 - x0) * PANEL_W
        parts.append(f'<text x="{_fmt(px)}" y="{top + PANEL_H + 14}" text-anchor="middle" '
                     f'font-size="10">{xv:g}</text>')
    for kind in MODEL_KINDS:
        pts = [(r["scale"], r[key]) for r in rows if r["model"] == kind and r[key] is not None]
        if not pts:
            continue
        pts.sort()
        coords = " ".join(f"{_fmt(left + (x - x0) / (x1 - x0) * PANEL_W)},"
                          f"{_fmt(top + (y1 - y) / (y1 - y0) * PANEL_H)}" for x, y in pts)
        parts.append(f'<polyline class="series" data-model="{kind}" fill="none" '
                     f'stroke="{COLORS[kind]}" stroke-width="1.5" points="{coords}"/>')
    parts.append("</g>")
    return parts


def results_svg(rows):
    """Four panels (signal/noise x train/test), one series per model."""
    scales = [r["scale"] for r in rows]
    x0, x1 = min(scales), max(scales)
    if x1 == x0:
        x1 = x0 + 1.0
    vals = [r[k] for r in rows for k, _ in PANELS if r[k] is not None]
    y0 = min(0.0, math.floor(min(vals, default=0.0) * 10) / 10)
    y1 = 1.0 if max(vals, default=0.0) <= 1.0 else math.ceil(max(vals) * 10) / 10
    width = 2 * (PANEL_W + 2 * MARGIN)
    height = 2 * (PANEL_H + 2 * MARGIN) + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
           f'viewBox="0 0 {width:g} {height:g}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for i, (key, title) in enumerate(PANELS):
        col, row = i % 2, i // 2
        left = MARGIN + col * (PANEL_W + 2 * MARGIN)
        top = MARGIN + row * (PANEL_H + 2 * MARGIN)
        out += _panel(rows, key, title, left, top, x0, x1, y0, y1)
    lx = MARGIN
    for kind in MODEL_KINDS:
        out.append(f'<text x="{lx}" y="{height - 10}" font-size="12" fill="{COLORS[kind]}">{kind.upper()}</text>')
        lx += 70
    out.append("</svg>")
    return "\n".join(out) + "\n"
