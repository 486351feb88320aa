"""CSV, JSON and SVG outputs of simulations and sweeps.

Every numeric CSV cell is written with ``repr`` so a file read back gives the
same floats, and repeated runs give byte-identical files. Charts are plain
SVG polylines with no external assets.
"""

from __future__ import annotations

import csv
import json
import warnings
from html import escape
from pathlib import Path

import numpy as np

from .sweep import DegenerateFit, cell_means, fit_quadratic, write_fit_csv, write_sweep_csv

TRACE_COLUMNS = ["t_s", "p_g_w", "p_b_w", "load_w", "forecast_w", "soc", "mismatch_w", "status"]
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf"]
MAX_POINTS = 2000  # polyline vertices per series


class ReportError(OSError):
    """An output file could not be written; the message names the path."""


def _writing(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_trace_csv(result, path) -> None:
    """One row per EMS period, values at the period start."""
    path = Path(path)
    with _writing(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(result.t, result.p_g, result.p_b, result.load, result.forecast, result.soc,
                       result.mismatch, result.status):
            w.writerow([repr(float(v)) for v in row[:-1]] + [row[-1]])


def read_trace_csv(path) -> dict:
    """Columns of a trace file as arrays (``status`` as a list of strings)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {c: np.array([float(r[c]) for r in rows]) for c in TRACE_COLUMNS[:-1]}
    out["status"] = [r["status"] for r in rows]
    return out


def write_summary(summary: dict, path) -> None:
    path = Path(path)
    with _writing(path) as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series, title: str, xlabel: str, ylabel: str, width: int = 720, height: int = 360,
               markers=()) -> str:
    """SVG chart of ``series = [(label, x, y), ...]`` plus optional ``markers`` drawn as dots."""
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [np.asarray(x, float) for _, x, _ in list(series) + list(markers)]
    ys = [np.asarray(y, float) for _, _, y in list(series) + list(markers)]
    finite_x = np.concatenate([x[np.isfinite(x)] for x in xs]) if xs else np.zeros(0)
    finite_y = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(0)
    x0, x1 = (finite_x.min(), finite_x.max()) if finite_x.size else (0.0, 1.0)
    y0, y1 = (finite_y.min(), finite_y.max()) if finite_y.size else (0.0, 1.0)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x0 + 0.5
    if y1 <= y0:
        pad = max(abs(y0) * 0.05, 1e-9)
        y0, y1 = y0 - pad, y0 + pad
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for i in range(5):
        fx, fy = x0 + (x1 - x0) * i / 4, y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{_fmt(px(fx))}" y="{top + ph + 16}" text-anchor="middle">{fx:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{_fmt(py(fy) + 4)}" text-anchor="end">{fy:.4g}</text>')
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{_fmt(py(fy))}" y2="{_fmt(py(fy))}" '
                   'stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, x, y) in enumerate(series):
        x, y = np.asarray(x, float), np.asarray(y, float)
        stride = max(1, int(np.ceil(len(x) / MAX_POINTS)))
        keep = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[keep][::stride], y[keep][::stride]))
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 8}" y="{top + 16 + 15 * i}" text-anchor="end" '
                   f'fill="{color}">{escape(label)}</text>')
    for i, (label, x, y) in enumerate(markers):
        color = PALETTE[i % len(PALETTE)]
        for a, b in zip(np.asarray(x, float), np.asarray(y, float)):
            if np.isfinite(a) and np.isfinite(b):
                out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="2.5" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write_text(path: Path, text: str) -> Path:
    with _writing(path) as fh:
        fh.write(text)
    return path


def plot_trace(trace: dict, out_dir) -> list:
    """Supply-vs-load and SoC charts from trace columns."""
    out_dir = Path(out_dir)
    t = trace["t_s"]
    supply = trace["p_g_w"] + trace["p_b_w"]
    power = line_chart([("load", t, trace["load_w"] / 1e6), ("supply (PGM+PCM)", t, supply / 1e6),
                        ("PGM", t, trace["p_g_w"] / 1e6), ("PCM", t, trace["p_b_w"] / 1e6)],
                       "Supply vs load", "time (s)", "power (MW)")
    soc = line_chart([("SoC", t, trace["soc"])], "Battery state of charge", "time (s)", "SoC")
    return [_write_text(out_dir / "supply_vs_load.svg", power), _write_text(out_dir / "soc.svg", soc)]


def write_run_reports(result, out_dir, plot: bool = False, summary_extra: dict | None = None) -> list:
    """``trace.csv`` and ``summary.json`` (plus charts when ``plot``); returns the written paths."""
    out_dir = Path(out_dir)
    trace_path = out_dir / "trace.csv"
    write_trace_csv(result, trace_path)
    summary = dict(result.summary())
    summary.update(summary_extra or {})
    write_summary(summary, out_dir / "summary.json")
    paths = [trace_path, out_dir / "summary.json"]
    if plot:
        paths += plot_trace(read_trace_csv(trace_path), out_dir)
    return paths


def degradation_chart(records, fits) -> str:
    means = cell_means(records)
    series, markers = [], []
    for fit in fits:
        qs = sorted(q for (n, q) in means if n == fit.noise)
        grid = np.linspace(min(qs), max(qs), 100)
        series.append((f"{fit.noise:g}% noise (R2 {fit.r2:.3f})", grid, fit(grid)))
        markers.append((f"{fit.noise:g}%", qs, [means[(fit.noise, q)][0] for q in qs]))
    return line_chart(series, "Battery capacity loss vs target SoC", "target SoC",
                      "capacity loss (%)", markers=markers)


def write_sweep_reports(records, out_dir, plot: bool = False) -> list:
    """``sweep.csv`` and ``fit.csv`` (plus the degradation chart when ``plot``).

    An empty or degenerate sweep still writes ``sweep.csv``; the fit is skipped
    with a warning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    try:
        write_sweep_csv(records, path)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    paths = [path]
    if not cell_means(records):
        warnings.warn("sweep has no finite results; fit skipped", RuntimeWarning, stacklevel=2)
        return paths
    try:
        fits = fit_quadratic(records)
    except DegenerateFit as exc:
        warnings.warn(f"fit skipped: {exc}", RuntimeWarning, stacklevel=2)
        return paths
    fit_path = out_dir / "fit.csv"
    try:
        write_fit_csv(fits, fit_path)
    except OSError as exc:
        raise ReportError(f"cannot write {fit_path}: {exc.strerror or exc}") from exc
    paths.append(fit_path)
    if plot:
        paths.append(_write_text(out_dir / "degradation_curve.svg", degradation_chart(records, fits)))
    return paths
