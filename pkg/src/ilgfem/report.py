"""CSV and SVG output for adaptive run records."""
from __future__ import annotations

import math
import os
import tempfile
from xml.sax.saxutils import escape

from .adapt import AdaptRunRecord

CSV_COLUMNS = (
    "level", "elements", "total_steps", "error_h1", "e_galerkin",
    "e_linear", "e_total", "effectivity", "energy", "newton_delta",
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_rows(record: AdaptRunRecord):
    for lv in record.levels:
        last = float(lv.newton_deltas[-1]) if lv.newton_deltas else None
        yield (
            lv.level, lv.elements, lv.total_steps,
            None if lv.error_h1 is None else float(lv.error_h1),
            float(lv.e_galerkin), float(lv.e_linear), float(lv.e_total),
            None if lv.effectivity is None else float(lv.effectivity),
            float(lv.energy), last,
        )


def emit_csv(record: AdaptRunRecord, path) -> None:
    """One row per level; the Newton column holds the last accepted damping."""
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(_cell(v) for v in row) for row in csv_rows(record)]
    _atomic_write(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Inverse of ``emit_csv``: list of dicts, empty cells as None."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        row = {}
        for k, v in zip(header, line.split(",")):
            if v == "":
                row[k] = None
            elif k in ("level", "elements", "total_steps"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        out.append(row)
    return out


SERIES = (
    ("error_h1", "error", "#1f77b4"),
    ("e_galerkin", "E_Galerkin", "#ff7f0e"),
    ("e_linear", "E_Linear", "#2ca02c"),
    ("e_total", "E_Galerkin + E_Linear", "#d62728"),
    ("effectivity", "effectivity", "#9467bd"),
)

W, H = 640, 480
PAD_L, PAD_R, PAD_T, PAD_B = 70, 190, 30, 50


def _series(record):
    out = []
    for attr, label, color in SERIES:
        pts = []
        for lv in record.levels:
            v = getattr(lv, attr)
            if v is not None and v > 0 and math.isfinite(v):
                pts.append((float(lv.elements), float(v)))
        out.append((label, color, pts))
    return out


def _decades(lo, hi):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return a, b


def emit_convergence_svg(record: AdaptRunRecord, path) -> None:
    """Log-log convergence plot with a reference line of slope -1/2.

    The root element carries ``data-logx``/``data-logy`` attributes
    ``"a b"`` such that pixel = a + b * log10(value).
    """
    if not record.levels:
        raise ValueError("cannot plot an empty record")
    series = _series(record)
    ns = [float(lv.elements) for lv in record.levels]
    vals = [v for _, _, pts in series for _, v in pts]
    x0, x1 = _decades(min(ns), max(ns))
    y0, y1 = _decades(min(vals), max(vals))
    bx = (W - PAD_L - PAD_R) / (x1 - x0)
    ax = PAD_L - bx * x0
    by = -(H - PAD_T - PAD_B) / (y1 - y0)
    ay = PAD_T - by * y1

    def px(n):
        return ax + bx * math.log10(n)

    def py(v):
        return ay + by * math.log10(v)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" data-logx="{ax!r} {bx!r}" data-logy="{ay!r} {by!r}">',
        f"<title>{escape(f'{record.problem} / {record.scheme} / {record.estimator}')}</title>",
        f'<rect x="{PAD_L}" y="{PAD_T}" width="{W - PAD_L - PAD_R}" '
        f'height="{H - PAD_T - PAD_B}" fill="none" stroke="black"/>',
    ]
    for k in range(x0, x1 + 1):
        x = ax + bx * k
        out.append(f'<line x1="{x:.2f}" y1="{H - PAD_B}" x2="{x:.2f}" y2="{H - PAD_B + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{H - PAD_B + 18}" font-size="11" text-anchor="middle">1e{k}</text>')
    for k in range(y0, y1 + 1):
        y = ay + by * k
        out.append(f'<line x1="{PAD_L - 5}" y1="{y:.2f}" x2="{PAD_L}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{PAD_L - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">1e{k}</text>')
    out.append(f'<text x="{(PAD_L + W - PAD_R) / 2:.1f}" y="{H - 10}" font-size="12" '
               f'text-anchor="middle">number of elements</text>')

    lines = len(record.levels) > 1
    if lines:
        err = [lv.error_h1 for lv in record.levels if lv.error_h1]
        anchor = err[0] if err else record.levels[0].e_total
        n_a, n_b = ns[0], ns[-1]
        r_b = anchor * (n_b / n_a) ** -0.5
        out.append(
            f'<line id="reference" x1="{px(n_a)!r}" y1="{py(anchor)!r}" x2="{px(n_b)!r}" '
            f'y2="{py(r_b)!r}" stroke="gray" stroke-dasharray="6,4"/>'
        )
    for i, (label, color, pts) in enumerate(series):
        out.append(f'<g class="series" data-name="{escape(label)}" stroke="{color}" fill="{color}">')
        if lines and len(pts) > 1:
            coords = " ".join(f"{px(n):.2f},{py(v):.2f}" for n, v in pts)
            out.append(f'<polyline points="{coords}" fill="none"/>')
        for n, v in pts:
            out.append(f'<circle cx="{px(n):.2f}" cy="{py(v):.2f}" r="2.5"/>')
        out.append("</g>")
        ly = PAD_T + 16 * i + 10
        lx = W - PAD_R + 12
        out.append(f'<rect x="{lx}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 15}" y="{ly + 1}" font-size="11">{escape(label)}</text>')
    if lines:
        ly = PAD_T + 16 * len(series) + 10
        out.append(f'<text x="{W - PAD_R + 12}" y="{ly + 1}" font-size="11" fill="gray">slope -1/2</text>')
    out.append("</svg>")
    _atomic_write(path, "\n".join(out) + "\n")
