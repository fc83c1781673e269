"""Standalone SVG figures: phase-diagram heatmaps, curves and 2D decision boundaries.

Nothing here needs a plotting library. Every emitter returns the SVG text and
optionally writes it to ``path``. Unless ``deterministic`` is set, a creation
timestamp is embedded as an XML comment.
"""
from __future__ import annotations

import math
import time
import warnings
from html import escape
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionError, IncompleteGrid
from .metrics import METRIC_FIELDS, Cutoffs, MetricsRecord, Regime, classify_regime
from .models import Model, forward_logits

REGIME_COLORS = {
    Regime.trivial_leakage: "#d62728",
    Regime.weak_leakage_memorizing: "#ffdd57",
    Regime.weak_leakage_nonmemorizing: "#9467bd",
    Regime.full_recovery: "#2ca02c",
    Regime.teacher_fail_student_matches: "#ff7f0e",
    Regime.teacher_fail_no_match: "#7f7f7f",
}

CLASS_COLORS = ("#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
                "#c49c94", "#f7b6d2", "#dbdb8d", "#9edae5", "#c7c7c7")
POINT_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#7f7f7f")

# viridis sampled at 9 points; values in between are linearly interpolated
_VIRIDIS = np.array([
    (68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142), (33, 144, 141),
    (39, 173, 129), (92, 200, 99), (170, 220, 50), (253, 231, 37),
], dtype=np.float64)


def colormap(u: float) -> str:
    """Hex colour for ``u`` in [0, 1] (clipped)."""
    u = min(max(float(u), 0.0), 1.0) * (len(_VIRIDIS) - 1)
    i = min(int(u), len(_VIRIDIS) - 2)
    rgb = _VIRIDIS[i] + (u - i) * (_VIRIDIS[i + 1] - _VIRIDIS[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in rgb)


def _svg(width, height, body: list[str], deterministic: bool) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
    ]
    if not deterministic:
        head.append(f"<!-- created {time.strftime('%Y-%m-%dT%H:%M:%S%z')} -->")
    return "\n".join(head + body + ["</svg>", ""])


def _write(text: str, path) -> str:
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


def _tick(v) -> str:
    return f"{v:.4g}"


def _grid_values(cells, value, x, y, cutoffs):
    buckets: dict[tuple, list] = {}
    for cell in cells:
        if cell.ok:
            buckets.setdefault((getattr(cell, x), getattr(cell, y)), []).append(cell)
    out = {}
    for key, group in buckets.items():
        if value == "regime":
            mean = {f: float(np.mean([getattr(c.metrics, f) for c in group])) for f in METRIC_FIELDS}
            cut = cutoffs or Cutoffs.for_classes(group[0].c)
            out[key] = classify_regime(MetricsRecord(**mean), cut)
        else:
            vals = [getattr(c.metrics, value) if value in METRIC_FIELDS else getattr(c, value) for c in group]
            out[key] = float(np.nanmean(vals))
    return out


def emit_heatmap(
    cells: Iterable,
    value: str = "regime",
    x: str = "alpha",
    y: str = "rho",
    path=None,
    filters: Optional[dict] = None,
    cutoffs: Optional[Cutoffs] = None,
    title: Optional[str] = None,
    deterministic: bool = False,
) -> str:
    """Seed-averaged heatmap of a metric or of the regime over two cell axes.

    ``cells`` is a ResultStore or any iterable of cell results. ``filters``
    keeps only cells whose attributes match (e.g. ``{"tau": 10.0}``). Accuracy
    values are clipped to [0, 1]; MSE values are drawn as ``log10`` between
    -10 and 2. Missing grid points are hatched and an ``IncompleteGrid``
    warning is issued.
    """
    filters = {k: v for k, v in (filters or {}).items() if v is not None}
    cells = [
        c for c in cells
        if all(math.isclose(getattr(c, k), v) for k, v in filters.items())
    ]
    if value != "regime" and value not in METRIC_FIELDS and value not in ("acc_S_test_focus", "acc_S_test_rest"):
        raise ValueError(f"unknown heatmap value {value!r}")
    grid = _grid_values(cells, value, x, y, cutoffs)
    if not grid:
        raise ValueError("no successful cells to plot")
    xs = sorted({k[0] for k in grid})
    ys = sorted({k[1] for k in grid})
    missing = [(a, b) for a in xs for b in ys if (a, b) not in grid]
    if missing:
        warnings.warn(f"{len(missing)} grid points have no results; drawn hatched", IncompleteGrid)

    log_scale = value.startswith("mse")
    lo, hi = (-10.0, 2.0) if log_scale else (0.0, 1.0)

    cw, ch = max(18, min(60, 480 // len(xs))), max(18, min(60, 360 // len(ys)))
    left, top = 60, 40 if title else 20
    pw, ph = cw * len(xs), ch * len(ys)
    legend_w = 230 if value == "regime" else 90
    width, height = left + pw + 20 + legend_w, top + ph + 50
    body = [
        '<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" '
        'patternTransform="rotate(45)"><rect width="6" height="6" fill="#ffffff"/>'
        '<line x1="0" y1="0" x2="0" y2="6" stroke="#999999" stroke-width="2"/></pattern></defs>',
    ]
    if title:
        body.append(f'<text x="{left}" y="20" font-size="13">{escape(title)}</text>')
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            px, py = left + i * cw, top + (len(ys) - 1 - j) * ch
            v = grid.get((a, b))
            if v is None:
                fill = "url(#hatch)"
                tip = "missing"
            elif value == "regime":
                fill = REGIME_COLORS[v]
                tip = v.label
            else:
                shown = math.log10(max(v, 1e-300)) if log_scale else v
                fill = colormap((min(max(shown, lo), hi) - lo) / (hi - lo))
                tip = f"{v:.4g}"
            body.append(
                f'<rect x="{px}" y="{py}" width="{cw}" height="{ch}" fill="{fill}" stroke="#ffffff" '
                f'stroke-width="0.5"><title>{x}={_tick(a)}, {y}={_tick(b)}: {escape(tip)}</title></rect>'
            )
    step_x = max(1, len(xs) // 10)
    for i, a in enumerate(xs):
        if i % step_x == 0:
            body.append(f'<text x="{left + i * cw + cw / 2}" y="{top + ph + 14}" text-anchor="middle">{_tick(a)}</text>')
    step_y = max(1, len(ys) // 10)
    for j, b in enumerate(ys):
        if j % step_y == 0:
            body.append(f'<text x="{left - 4}" y="{top + (len(ys) - j) * ch - ch / 2 + 4}" text-anchor="end">{_tick(b)}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{top + ph + 32}" text-anchor="middle">{escape(x)}</text>')
    body.append(
        f'<text x="14" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 14 {top + ph / 2})">{escape(y)}</text>'
    )

    lx = left + pw + 20
    if value == "regime":
        for k, (regime, color) in enumerate(REGIME_COLORS.items()):
            ly = top + k * 18
            body.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{color}"/>')
            body.append(f'<text x="{lx + 18}" y="{ly + 10}">{regime.label}</text>')
    else:
        n_steps = 50
        bar_h = min(ph, 200)
        for k in range(n_steps):
            u = 1.0 - (k + 0.5) / n_steps
            body.append(
                f'<rect x="{lx}" y="{top + k * bar_h / n_steps:.2f}" width="14" '
                f'height="{bar_h / n_steps + 0.5:.2f}" fill="{colormap(u)}"/>'
            )
        label = f"log10 {value}" if log_scale else value
        body.append(f'<text x="{lx + 18}" y="{top + 9}">{_tick(hi)}</text>')
        body.append(f'<text x="{lx + 18}" y="{top + bar_h}">{_tick(lo)}</text>')
        body.append(f'<text x="{lx}" y="{top + bar_h + 16}">{escape(label)}</text>')
    return _write(_svg(width, height, body, deterministic), path)


def emit_curves(
    cells: Iterable,
    metrics: Sequence[str] = ("acc_T_star", "acc_S_train", "acc_S_test", "acc_S_val"),
    x: str = "alpha",
    path=None,
    filters: Optional[dict] = None,
    title: Optional[str] = None,
    deterministic: bool = False,
) -> str:
    """Seed-averaged accuracy curves against one axis, with standard-error bars."""
    filters = {k: v for k, v in (filters or {}).items() if v is not None}
    cells = [
        c for c in cells
        if c.ok and all(math.isclose(getattr(c, k), v) for k, v in filters.items())
    ]
    if not cells:
        raise ValueError("no successful cells to plot")
    xs = sorted({getattr(c, x) for c in cells})
    left, top, pw, ph = 50, 30 if title else 15, 420, 260
    width, height = left + pw + 150, top + ph + 45
    x0, x1 = xs[0], xs[-1] if xs[-1] > xs[0] else xs[0] + 1
    sx = lambda v: left + (v - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda v: top + (1 - min(max(v, 0.0), 1.0)) * ph  # noqa: E731
    body = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>']
    if title:
        body.append(f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>')
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        body.append(f'<text x="{left - 4}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    for v in xs[:: max(1, len(xs) // 8)]:
        body.append(f'<text x="{sx(v):.1f}" y="{top + ph + 14}" text-anchor="middle">{_tick(v)}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{top + ph + 32}" text-anchor="middle">{escape(x)}</text>')
    for k, metric in enumerate(metrics):
        color = POINT_COLORS[k % len(POINT_COLORS)]
        pts = []
        for v in xs:
            vals = np.array([getattr(c.metrics, metric) for c in cells if getattr(c, x) == v])
            se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
            pts.append((v, vals.mean(), se))
        path_d = " ".join(f"{'M' if i == 0 else 'L'}{sx(a):.1f},{sy(m):.1f}" for i, (a, m, _) in enumerate(pts))
        body.append(f'<path d="{path_d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, m, se in pts:
            if se > 0:
                body.append(f'<line x1="{sx(a):.1f}" x2="{sx(a):.1f}" y1="{sy(m - se):.1f}" y2="{sy(m + se):.1f}" stroke="{color}"/>')
            body.append(f'<circle cx="{sx(a):.1f}" cy="{sy(m):.1f}" r="2.5" fill="{color}"/>')
        ly = top + 10 + 16 * k
        body.append(f'<line x1="{left + pw + 12}" x2="{left + pw + 30}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{left + pw + 36}" y="{ly + 4}">{escape(metric)}</text>')
    return _write(_svg(width, height, body, deterministic), path)


def raster_classes(model: Model, bounds=(-3.0, 3.0, -3.0, 3.0), resolution: int = 100) -> np.ndarray:
    """Argmax class on a ``resolution x resolution`` grid; row 0 is the top (max y).

    Raises:
        DimensionError: if the model does not take two-dimensional inputs.
    """
    if model.d != 2:
        raise DimensionError(f"decision boundaries need 2D inputs, model has d={model.d}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    xmin, xmax, ymin, ymax = bounds
    gx = xmin + (np.arange(resolution) + 0.5) * (xmax - xmin) / resolution
    gy = ymax - (np.arange(resolution) + 0.5) * (ymax - ymin) / resolution
    XX, YY = np.meshgrid(gx, gy)
    Z = forward_logits(model, np.column_stack([XX.ravel(), YY.ravel()]))
    return Z.argmax(axis=1).reshape(resolution, resolution)


def emit_decision_boundary(
    model: Model,
    bounds=(-3.0, 3.0, -3.0, 3.0),
    resolution: int = 100,
    path=None,
    data: Optional[tuple[np.ndarray, np.ndarray]] = None,
    title: Optional[str] = None,
    deterministic: bool = False,
) -> str:
    """Rasterised argmax regions with optional ``(X, labels)`` points on top.

    Correctly classified points are drawn as filled circles, misclassified
    ones as crosses, both in the colour of their true label.
    """
    grid = raster_classes(model, bounds, resolution)
    xmin, xmax, ymin, ymax = bounds
    size, top = 400, 30 if title else 10
    px = size / resolution
    body = []
    if title:
        body.append(f'<text x="10" y="18" font-size="13">{escape(title)}</text>')
    for r in range(resolution):
        row = grid[r]
        start = 0
        for col in range(1, resolution + 1):
            if col == resolution or row[col] != row[start]:
                color = CLASS_COLORS[int(row[start]) % len(CLASS_COLORS)]
                body.append(
                    f'<rect x="{10 + start * px:.2f}" y="{top + r * px:.2f}" width="{(col - start) * px + 0.3:.2f}" '
                    f'height="{px + 0.3:.2f}" fill="{color}"/>'
                )
                start = col
    if data is not None:
        X, y = np.asarray(data[0], dtype=np.float64), np.asarray(data[1])
        pred = forward_logits(model, X).argmax(axis=1)
        for (a, b), label, guess in zip(X, y, pred):
            cx = 10 + (a - xmin) / (xmax - xmin) * size
            cy = top + (ymax - b) / (ymax - ymin) * size
            if not (10 <= cx <= 10 + size and top <= cy <= top + size):
                continue
            color = POINT_COLORS[int(label) % len(POINT_COLORS)]
            if guess == label:
                body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3.5" fill="{color}" stroke="#000000" stroke-width="0.6"/>')
            else:
                d = 4
                body.append(
                    f'<path d="M{cx - d:.2f},{cy - d:.2f}L{cx + d:.2f},{cy + d:.2f}M{cx - d:.2f},{cy + d:.2f}L{cx + d:.2f},{cy - d:.2f}" '
                    f'stroke="{color}" stroke-width="2"/>'
                )
    body.append(f'<rect x="10" y="{top}" width="{size}" height="{size}" fill="none" stroke="#333333"/>')
    return _write(_svg(size + 20, size + top + 10, body, deterministic), path)
