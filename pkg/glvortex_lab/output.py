"""
Artifacts written by the experiment driver: CSV tables, JSON manifests and
small SVG plots. Every file is written to a temporary sibling first and then
renamed into place, so an interrupted run never leaves a partial file.
"""

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SVG_SIZE = 400
SVG_MARGIN = 20
CSV_FLOAT_FORMAT = "%.12g"


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write text to a temporary file in the target directory and rename it over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_csv(path: Union[str, Path], rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]],
              columns: Optional[Sequence[str]] = None) -> Path:
    """Write rows as CSV; column order follows `columns` when given."""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    return atomic_write_text(path, frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT))


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _color(t: float) -> str:
    """Blue-white-red ramp for t in [0, 1]."""
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        s = t / 0.5
        r, g, b = int(255 * s), int(255 * s), 255
    else:
        s = (t - 0.5) / 0.5
        r, g, b = 255, int(255 * (1.0 - s)), int(255 * (1.0 - s))
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_heatmap(array: np.ndarray, bbox, mask: Optional[np.ndarray] = None, title: str = "") -> str:
    """
    Heatmap of a bounding-box array (indexed [ix, iy]) as SVG rectangles.

    Args:
        array: Values on the grid box
        bbox: (xmin, xmax, ymin, ymax) of the box
        mask: Nodes to draw; all nodes when omitted
        title: Text drawn above the plot
    """
    nx, ny = array.shape
    mask = np.ones(array.shape, dtype=bool) if mask is None else mask
    shown = array[mask]
    lo, hi = (float(shown.min()), float(shown.max())) if shown.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    cw = (SVG_SIZE - 2 * SVG_MARGIN) / nx
    ch = (SVG_SIZE - 2 * SVG_MARGIN) / ny

    parts = [_svg_header(title, f"min {lo:.4g}, max {hi:.4g}")]
    for i, j in zip(*np.nonzero(mask)):
        x = SVG_MARGIN + i * cw
        # y axis points up
        y = SVG_SIZE - SVG_MARGIN - (j + 1) * ch
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
            f'fill="{_color((float(array[i, j]) - lo) / span)}"/>'
        )
    parts.append("</svg>\n")
    return "\n".join(parts)


def svg_scatter(points: np.ndarray, bbox, outline: Optional[np.ndarray] = None, title: str = "",
                shaded: Optional[np.ndarray] = None, cell: float = 0.0) -> str:
    """
    Scatter plot of points in the box.

    An optional closed outline (boundary polygon) is drawn first, then squares
    of side `cell` centered at the `shaded` points (a set of grid nodes), then
    the points themselves.
    """
    xmin, xmax, ymin, ymax = bbox
    scale = (SVG_SIZE - 2 * SVG_MARGIN) / max(xmax - xmin, ymax - ymin)

    def to_svg(p):
        return SVG_MARGIN + (p[0] - xmin) * scale, SVG_SIZE - SVG_MARGIN - (p[1] - ymin) * scale

    parts = [_svg_header(title, f"{len(points)} points")]
    if outline is not None and len(outline):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(to_svg, outline))
        parts.append(f'<polygon points="{coords}" fill="none" stroke="#555555" stroke-width="1"/>')
    if shaded is not None and len(shaded):
        side = cell * scale
        for p in np.atleast_2d(shaded):
            x, y = to_svg(p)
            parts.append(
                f'<rect x="{x - 0.5 * side:.2f}" y="{y - 0.5 * side:.2f}" width="{side:.2f}" height="{side:.2f}" '
                f'fill="#aed6f1" stroke="none"/>'
            )
    for p in np.atleast_2d(points):
        x, y = to_svg(p)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="#c0392b"/>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def _svg_header(title: str, caption: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">\n'
        f'<text x="{SVG_MARGIN}" y="14" font-size="12" font-family="sans-serif">{title} ({caption})</text>'
    )


def write_svg(path: Union[str, Path], svg: str) -> Path:
    return atomic_write_text(path, svg)


def fit_slope(x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
    """
    Least-squares fit of log y = slope · log x + intercept.

    Pairs with a non-positive or non-finite coordinate are dropped.
    """
    frame = pd.DataFrame({"x": np.asarray(x, dtype=float), "y": np.asarray(y, dtype=float)})
    frame = frame[(frame.x > 0) & (frame.y > 0)].replace([np.inf, -np.inf], np.nan).dropna()
    if len(frame) < 2:
        return {"slope": math.nan, "intercept": math.nan, "points": len(frame)}
    slope, intercept = np.polyfit(np.log(frame.x), np.log(frame.y), 1)
    return {"slope": float(slope), "intercept": float(intercept), "points": len(frame)}


def convergence_rates(errors: Sequence[float], resolutions: Sequence[int]) -> List[float]:
    """Observed orders log(e_{k-1}/e_k)/log(n_k/n_{k-1}); NaN for the first entry."""
    rates = [math.nan]
    for k in range(1, len(errors)):
        prev, cur = errors[k - 1], errors[k]
        if prev > 0 and cur > 0:
            rates.append(math.log(prev / cur) / math.log(resolutions[k] / resolutions[k - 1]))
        else:
            rates.append(math.nan)
    return rates
