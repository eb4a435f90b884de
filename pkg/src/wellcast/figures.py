"""Dependency-free SVG figures with CSV sidecars.

Each emitter writes the plotted data to a sidecar CSV next to the SVG (same
name, .csv suffix); the sidecar is the source of truth and regenerating a
figure from it is byte-identical. The plot group carries data-* attributes
describing the data-to-pixel map so tests can invert coordinates exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluate import sturges_bin_count

WIDTH, HEIGHT = 640, 480
MARGIN = 60


@dataclass(frozen=True)
class _Frame:
    x0: float
    x1: float
    y0: float
    y1: float

    def px(self, x: float) -> float:
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y: float) -> float:
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _pad_range(lo: float, hi: float):
    if lo == hi:
        pad = max(0.5, abs(lo) * 0.05)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _open_svg(parts: list, frame: _Frame, title: str, xlabel: str, ylabel: str, meta: str = ""):
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    if meta:
        parts.append(f"<!-- {meta} -->")
    parts.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    parts.append(
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>'
    )
    # axes
    parts.append(
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 16}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {HEIGHT / 2:.1f})">{ylabel}</text>'
    )
    for frac in (0.0, 0.5, 1.0):
        xv = frame.x0 + frac * (frame.x1 - frame.x0)
        yv = frame.y0 + frac * (frame.y1 - frame.y0)
        parts.append(
            f'<text x="{frame.px(xv):.3f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
            f'font-size="10">{xv:.4g}</text>'
        )
        parts.append(
            f'<text x="{MARGIN - 6}" y="{frame.py(yv):.3f}" text-anchor="end" '
            f'font-size="10">{yv:.4g}</text>'
        )
    parts.append(
        f'<g class="plot" data-x0="{frame.x0!r}" data-x1="{frame.x1!r}" '
        f'data-y0="{frame.y0!r}" data-y1="{frame.y1!r}" '
        f'data-px0="{MARGIN}" data-px1="{WIDTH - MARGIN}" '
        f'data-py0="{HEIGHT - MARGIN}" data-py1="{MARGIN}">'
    )


def _close_svg(parts: list, path) -> None:
    parts.append("</g>")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".csv")


def _write_sidecar(path, header: list, rows) -> Path:
    sidecar = _sidecar_path(path)
    with open(sidecar, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return sidecar


def emit_scatter(y_true, y_pred, path, units: str = "", meta: str = "") -> None:
    """Predicted-vs-actual scatter with a 45-degree reference line."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have equal length")
    _write_sidecar(path, ["actual", "predicted"], zip(map(float, y_true), map(float, y_pred)))

    if len(y_true):
        lo, hi = _pad_range(
            float(min(y_true.min(), y_pred.min())), float(max(y_true.max(), y_pred.max()))
        )
    else:
        lo, hi = 0.0, 1.0
    frame = _Frame(lo, hi, lo, hi)
    unit_suffix = f" ({units})" if units else ""
    parts: list = []
    _open_svg(parts, frame, "Predicted vs actual", f"actual{unit_suffix}",
              f"predicted{unit_suffix}", meta)
    parts.append(
        f'<line class="reference" x1="{frame.px(lo):.3f}" y1="{frame.py(lo):.3f}" '
        f'x2="{frame.px(hi):.3f}" y2="{frame.py(hi):.3f}" stroke="grey" stroke-dasharray="4 3"/>'
    )
    for a, p in zip(y_true, y_pred):
        parts.append(
            f'<circle cx="{frame.px(a):.3f}" cy="{frame.py(p):.3f}" r="3" '
            f'fill="steelblue" fill-opacity="0.6"/>'
        )
    _close_svg(parts, path)


def emit_validation_curve(train_losses, val_losses, path, meta: str = "") -> None:
    """Training and validation loss per epoch as two polylines with point markers."""
    train_losses = np.asarray(train_losses, dtype=float)
    val_losses = np.asarray(val_losses, dtype=float)
    if train_losses.shape != val_losses.shape or len(train_losses) < 1:
        raise ValueError("curves must have equal non-zero length")
    epochs = np.arange(1, len(train_losses) + 1)
    _write_sidecar(
        path, ["epoch", "train", "val"],
        ((int(e), float(tr), float(va)) for e, tr, va in zip(epochs, train_losses, val_losses)),
    )

    lo = float(min(train_losses.min(), val_losses.min()))
    hi = float(max(train_losses.max(), val_losses.max()))
    y0, y1 = _pad_range(lo, hi)
    x0, x1 = _pad_range(1.0, float(len(epochs))) if len(epochs) > 1 else (0.0, 2.0)
    frame = _Frame(x0, x1, y0, y1)
    parts: list = []
    _open_svg(parts, frame, "Loss by epoch", "epoch", "MSE loss", meta)
    for cls, series, color in (("train", train_losses, "steelblue"), ("val", val_losses, "darkorange")):
        if len(epochs) > 1:
            points = " ".join(f"{frame.px(e):.3f},{frame.py(v):.3f}" for e, v in zip(epochs, series))
            parts.append(
                f'<polyline class="{cls}" points="{points}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
        for e, v in zip(epochs, series):
            parts.append(
                f'<circle class="{cls}-marker" cx="{frame.px(e):.3f}" cy="{frame.py(v):.3f}" '
                f'r="3" fill="{color}"/>'
            )
    parts.append(
        f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 4}" text-anchor="end" font-size="11" '
        f'fill="steelblue">train</text>'
    )
    parts.append(
        f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 18}" text-anchor="end" font-size="11" '
        f'fill="darkorange">validation</text>'
    )
    _close_svg(parts, path)


def emit_histogram(samples, ci, path, xlabel: str = "RMSE", meta: str = "") -> None:
    """Sturges-binned histogram with the confidence bounds as vertical markers."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    k = sturges_bin_count(len(samples))
    lo, hi = float(samples.min()), float(samples.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(samples, bins=k, range=(lo, hi))
    _render_histogram(edges, counts, ci, path, xlabel, meta)


def _render_histogram(edges, counts, ci, path, xlabel: str = "RMSE", meta: str = "") -> None:
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=int)
    k = len(counts)
    ci_lo, ci_hi = float(ci[0]), float(ci[1])
    lo, hi = float(edges[0]), float(edges[-1])
    _write_sidecar(
        path, ["bin_left", "bin_right", "count"],
        ((float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(k)),
    )

    x0, x1 = _pad_range(min(lo, ci_lo), max(hi, ci_hi))
    y0, y1 = 0.0, float(counts.max()) * 1.05
    frame = _Frame(x0, x1, y0, y1)
    parts: list = []
    _open_svg(parts, frame, "Realization distribution", xlabel, "count", meta)
    for i in range(k):
        if counts[i] == 0:
            continue
        left, right = frame.px(edges[i]), frame.px(edges[i + 1])
        top = frame.py(float(counts[i]))
        parts.append(
            f'<rect class="bin" x="{left:.3f}" y="{top:.3f}" width="{right - left:.3f}" '
            f'height="{frame.py(0) - top:.3f}" fill="steelblue" fill-opacity="0.7" '
            f'stroke="white"/>'
        )
    for cls, value in (("ci-lo", ci_lo), ("ci-hi", ci_hi)):
        parts.append(
            f'<line class="{cls}" x1="{frame.px(value):.3f}" y1="{frame.py(y0):.3f}" '
            f'x2="{frame.px(value):.3f}" y2="{MARGIN}" stroke="crimson" '
            f'stroke-dasharray="6 3"/>'
        )
    _close_svg(parts, path)


def read_sidecar(path):
    """(header, rows-as-strings) of a figure sidecar CSV."""
    with open(_sidecar_path(path) if str(path).endswith(".svg") else path,
              newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def regenerate_figure(
    sidecar_csv, svg_path, ci=None, meta: str = "", xlabel: str = "RMSE", units: str = ""
) -> None:
    """Rebuild a figure from its sidecar; the figure kind is inferred from the header."""
    header, rows = read_sidecar(sidecar_csv)
    if header == ["actual", "predicted"]:
        actual = [float(r[0]) for r in rows]
        predicted = [float(r[1]) for r in rows]
        emit_scatter(actual, predicted, svg_path, units=units, meta=meta)
    elif header == ["epoch", "train", "val"]:
        emit_validation_curve(
            [float(r[1]) for r in rows], [float(r[2]) for r in rows], svg_path, meta=meta
        )
    elif header == ["bin_left", "bin_right", "count"]:
        if ci is None:
            raise ValueError("histogram regeneration needs the ci bounds")
        edges = [float(r[0]) for r in rows] + [float(rows[-1][1])]
        counts = [int(r[2]) for r in rows]
        _render_histogram(edges, counts, ci, svg_path, xlabel=xlabel, meta=meta)
    else:
        raise ValueError(f"unrecognized sidecar header {header}")
