"""Result emission: CSV tables, JSON summaries, manifests, and standalone SVG line plots."""
from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from .harness import ComparisonReport

__all__ = [
    "TRAJECTORY_HEADER",
    "fmt",
    "write_report",
    "write_csv",
    "write_json",
    "render_svg",
    "versions",
]

TRAJECTORY_HEADER = [
    "iteration",
    "s",
    "a",
    "emp_mean",
    "emp_var",
    "theory_mean",
    "theory_var",
    "rel_err_mean",
    "rel_err_var",
]


def fmt(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


def _open(path: Path, mode: str = "w"):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    with _open(path) as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def versions() -> Dict[str, str]:
    import numba
    import scipy

    from . import __version__

    return {
        "dmfp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _trajectory_rows(report: ComparisonReport):
    rm, rv = report.rel_err_mean, report.rel_err_var
    _, n, k = report.emp_mean.shape
    for i, label in enumerate(report.labels):
        for s in range(n):
            for a in range(k):
                yield (
                    label,
                    s,
                    a,
                    report.emp_mean[i, s, a],
                    report.emp_var[i, s, a],
                    report.theory_mean[i, s, a],
                    report.theory_var[i, s, a],
                    rm[i, s, a],
                    rv[i, s, a],
                )


def write_report(report: ComparisonReport, out_dir) -> Dict[str, Path]:
    """Write trajectory.csv, qq.csv, summary.json and the mean, variance and Q-Q SVG plots into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create {out}: {exc.strerror}") from exc
    files = {"trajectory": write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, _trajectory_rows(report))}
    qq = report.qq if report.qq is not None else np.empty((0, 2))
    files["qq"] = write_csv(out / "qq.csv", ["theoretical_q", "sample_q"], qq)
    files["summary"] = write_json(out / "summary.json", report.summary())

    pooled = [p for p in report.pooled() if p["iteration"] != "fixed"]
    xs = [p["iteration"] for p in pooled]
    files["mean_svg"] = render_svg(
        {
            "empirical": (xs, [p["emp_mean"] for p in pooled]),
            "theory": (xs, [p["theory_mean"] for p in pooled]),
        },
        out / "mean.svg",
        title="Q-value mean",
        xlabel="iteration",
        ylabel="mean",
        styles={"empirical": "dots", "theory": "dashed"},
    )
    files["var_svg"] = render_svg(
        {
            "empirical": (xs, [p["emp_var"] for p in pooled]),
            "theory": (xs, [p["theory_var"] for p in pooled]),
        },
        out / "variance.svg",
        title="Q-value variance",
        xlabel="iteration",
        ylabel="variance",
        styles={"empirical": "dots", "theory": "dashed"},
    )
    if len(qq):
        lim = [float(qq[:, 0].min()), float(qq[:, 0].max())]
        files["qq_svg"] = render_svg(
            {"sample": (qq[:, 0], qq[:, 1]), "diagonal": (lim, lim)},
            out / "qq.svg",
            title="Normal Q-Q",
            xlabel="theoretical quantile",
            ylabel="sample quantile",
            styles={"sample": "dots", "diagonal": "dashed"},
        )
    return files


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 130, 40, 50

SeriesMap = Union[Mapping[str, Tuple[Sequence[float], Sequence[float]]], Sequence[Tuple[str, Sequence[float], Sequence[float]]]]


def _ticks(lo: float, hi: float, n: int = 5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg(
    series: SeriesMap,
    path,
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "y",
    styles: Optional[Mapping[str, str]] = None,
) -> Path:
    """Line plot as a standalone SVG: one ``<polyline>`` per series, labelled axes, legend.

    ``styles`` maps a series name to ``"solid"``, ``"dashed"`` or ``"dots"``
    (markers drawn over a faint polyline).  Non-finite points are dropped.
    """
    items = list(series.items()) if isinstance(series, Mapping) else [(n, x, y) for n, x, y in series]
    items = [(it[0], *it[1]) if len(it) == 2 else it for it in items]
    styles = dict(styles or {})
    clean = []
    for name, x, y in items:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"series {name!r}: x and y lengths differ")
        ok = np.isfinite(x) & np.isfinite(y)
        clean.append((str(name), x[ok], y[ok]))
    allx = np.concatenate([c[1] for c in clean]) if clean else np.empty(0)
    ally = np.concatenate([c[2] for c in clean]) if clean else np.empty(0)
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _MT + ph - (v - y0) / (y1 - y0) * ph

    el = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line class="axis" x1="{_ML}" y1="{_MT + ph}" x2="{_ML + pw}" y2="{_MT + ph}" stroke="black"/>',
        f'<line class="axis" x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + ph}" stroke="black"/>',
        f'<text class="xlabel" x="{_ML + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text class="ylabel" x="16" y="{_MT + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {_MT + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(x0, x1):
        el.append(f'<text x="{px(t):.1f}" y="{_MT + ph + 16}" text-anchor="middle" font-size="10">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        el.append(f'<text x="{_ML - 6}" y="{py(t) + 3:.1f}" text-anchor="end" font-size="10">{t:.4g}</text>')
    for i, (name, x, y) in enumerate(clean):
        color = _PALETTE[i % len(_PALETTE)]
        style = styles.get(name, "solid")
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        dash = ' stroke-dasharray="6 4"' if style == "dashed" else ""
        opacity = ' stroke-opacity="0.3"' if style == "dots" else ""
        el.append(f'<polyline data-series="{escape(name)}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}{opacity}/>')
        if style == "dots":
            el.extend(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>' for a, b in zip(x, y))
        ly = _MT + 14 + 18 * i
        el.append(f'<line x1="{_W - _MR + 10}" y1="{ly}" x2="{_W - _MR + 34}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        el.append(f'<text x="{_W - _MR + 40}" y="{ly + 4}">{escape(name)}</text>')
    el.append("</svg>")
    path = Path(path)
    with _open(path) as fh:
        fh.write("\n".join(el) + "\n")
    return path
