"""
Hand-written SVG figures: hydrograph, TSOI quantile band, cell/storage
correlation grid and the three-panel cell inspection

Coordinates are formatted with fixed precision so identical inputs give
identical files.
"""
from html import escape
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

WIDTH = 960
MARGIN_LEFT = 70
MARGIN_RIGHT = 30
PANEL_GAP = 30
TITLE_HEIGHT = 50
FONT = 'font-family="monospace"'

COLORS = ("#2563eb", "#dc2626", "#16a34a", "#9333ea", "#ea580c", "#0891b2")
SnowMask = Optional[Sequence[bool]]


def _finite_range(arrays: Sequence[np.ndarray]) -> Tuple[float, float]:
    values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    values = values[np.isfinite(values)]
    if values.size == 0:
        return 0.0, 1.0
    low, high = float(values.min()), float(values.max())
    if low == high:
        return low - 1.0, high + 1.0
    return low, high


def _scale(values, low: float, high: float, top: float, bottom: float) -> np.ndarray:
    """Map data values to y pixels, `high` at `top`"""
    return bottom - (np.asarray(values, dtype=np.float64) - low) / (high - low) * (bottom - top)


def _x_positions(count: int) -> np.ndarray:
    right = WIDTH - MARGIN_RIGHT
    if count == 1:
        return np.array([(MARGIN_LEFT + right) / 2.0])
    return MARGIN_LEFT + np.arange(count) * (right - MARGIN_LEFT) / (count - 1)


def _polyline(xs: np.ndarray, ys: np.ndarray, color: str, dashed: bool = False, width: float = 1.5) -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys) if np.isfinite(y))
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return f'  <polyline points="{points}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>'


def _text(x: float, y: float, label: str, size: int = 12, anchor: str = "start", color: str = "#1e293b") -> str:
    return (f'  <text x="{x:.2f}" y="{y:.2f}" fill="{color}" font-size="{size}" {FONT} '
            f'text-anchor="{anchor}">{escape(label)}</text>')


def _frame(top: float, bottom: float, label: str, low: float, high: float) -> List[str]:
    right = WIDTH - MARGIN_RIGHT
    return [
        f'  <rect x="{MARGIN_LEFT}" y="{top:.2f}" width="{right - MARGIN_LEFT}" height="{bottom - top:.2f}" '
        f'fill="none" stroke="#94a3b8" stroke-width="1"/>',
        _text(MARGIN_LEFT - 6, top + 10, f"{high:.3g}", 10, "end"),
        _text(MARGIN_LEFT - 6, bottom, f"{low:.3g}", 10, "end"),
        _text(MARGIN_LEFT + 6, top + 14, label, 12),
    ]


def _legend(entries: Sequence[Tuple[str, str]], y: float) -> List[str]:
    out, x = [], WIDTH - MARGIN_RIGHT
    for label, color in reversed(entries):
        out.append(_text(x, y, label, 11, "end", color))
        x -= 10 + 7 * len(label)
    return out


def _date_axis(dates: pd.DatetimeIndex, y: float, ticks: int = 6) -> List[str]:
    xs = _x_positions(len(dates))
    picks = np.unique(np.linspace(0, len(dates) - 1, min(ticks, len(dates))).round().astype(int))
    return [_text(xs[k], y, f"{dates[k]:%Y-%m-%d}", 10, "middle") for k in picks]


def _document(height: float, title: str, body: List[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height:.0f}" '
        f'viewBox="0 0 {WIDTH} {height:.0f}">',
        f'  <rect x="0" y="0" width="{WIDTH}" height="{height:.0f}" fill="#ffffff"/>',
        _text(MARGIN_LEFT, 30, title, 18),
    ]
    return "\n".join(head + body + ["</svg>", ""])


def _write(path: Union[str, Path], svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg, encoding="utf-8")
    return path


def hydrograph_svg(
    path: Union[str, Path],
    dates: pd.DatetimeIndex,
    observed: np.ndarray,
    simulated: np.ndarray,
    precip: np.ndarray,
    snow_days: SnowMask = None,
    title: str = "Observed and simulated discharge",
) -> Path:
    """Precipitation hangs from the top axis (snow days darker); discharge below"""
    if not (len(dates) == len(observed) == len(simulated) == len(precip)):
        raise ValueError("hydrograph series must share one date axis")
    xs = _x_positions(len(dates))
    bar = max((WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / max(len(dates), 1), 0.5)
    body: List[str] = []

    rain_top, rain_bottom = TITLE_HEIGHT, TITLE_HEIGHT + 120
    p_low, p_high = 0.0, max(float(np.nanmax(precip)) if len(precip) else 0.0, 1e-9)
    body += _frame(rain_top, rain_bottom, "precipitation (mm/day)", p_low, p_high)
    snow = np.zeros(len(dates), dtype=bool) if snow_days is None else np.asarray(snow_days, dtype=bool)
    for x, p, cold in zip(xs, precip, snow):
        if p > 0:
            depth = p / p_high * (rain_bottom - rain_top)
            color = "#1e3a8a" if cold else "#93c5fd"
            body.append(f'  <rect x="{x - bar / 2:.2f}" y="{rain_top:.2f}" width="{bar:.2f}" '
                        f'height="{depth:.2f}" fill="{color}"/>')

    q_top = rain_bottom + PANEL_GAP
    q_bottom = q_top + 260
    low, high = _finite_range([observed, simulated])
    body += _frame(q_top, q_bottom, "discharge (mm/day)", low, high)
    body.append(_polyline(xs, _scale(observed, low, high, q_top, q_bottom), COLORS[0]))
    body.append(_polyline(xs, _scale(simulated, low, high, q_top, q_bottom), COLORS[1], dashed=True))
    body += _legend([("observed", COLORS[0]), ("simulated (dashed)", COLORS[1])], q_top - 6)
    body += _date_axis(dates, q_bottom + 16)
    return _write(path, _document(q_bottom + 30, title, body))


def tsoi_quantile_svg(
    path: Union[str, Path],
    quantiles: pd.DataFrame,
    climatology: Optional[pd.DataFrame] = None,
    title: str = "Time steps of influence by day of year",
) -> Path:
    """Interquartile TSOI band with median, over per-DOY reference medians"""
    doy = quantiles["doy"].to_numpy()
    xs = MARGIN_LEFT + (doy - 1) / 365.0 * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    body: List[str] = []

    top, bottom = TITLE_HEIGHT, TITLE_HEIGHT + 240
    low, high = _finite_range([quantiles["q25"], quantiles["q75"]])
    low = min(low, 0.0)
    body += _frame(top, bottom, "TSOI (days)", low, high)
    upper = _scale(quantiles["q75"], low, high, top, bottom)
    lower = _scale(quantiles["q25"], low, high, top, bottom)
    outline = list(zip(xs, upper)) + list(zip(xs[::-1], lower[::-1]))
    body.append('  <polygon points="' + " ".join(f"{x:.2f},{y:.2f}" for x, y in outline)
                + f'" fill="{COLORS[0]}" fill-opacity="0.25" stroke="none"/>')
    body.append(_polyline(xs, _scale(quantiles["q50"], low, high, top, bottom), COLORS[0], width=2))
    body += _legend([("25-75 % band", COLORS[0]), ("median", COLORS[0])], top - 6)

    if climatology is not None:
        panels = [(c, COLORS[k + 1]) for k, c in enumerate(["precip", "discharge", "tmin"]) if c in climatology]
        ref_xs = MARGIN_LEFT + (climatology["doy"].to_numpy() - 1) / 365.0 * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
        for column, color in panels:
            top = bottom + PANEL_GAP
            bottom = top + 90
            values = climatology[column].to_numpy()
            low, high = _finite_range([values])
            body += _frame(top, bottom, f"median {column}", low, high)
            body.append(_polyline(ref_xs, _scale(values, low, high, top, bottom), color))
    body += [_text(MARGIN_LEFT + (d - 1) / 365.0 * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT), bottom + 16,
                   f"{d}", 10, "middle") for d in (1, 91, 182, 274, 366)]
    body.append(_text(WIDTH / 2, bottom + 30, "day of year", 11, "middle"))
    return _write(path, _document(bottom + 40, title, body))


def _diverging(value: float) -> str:
    """Blue for negative, red for positive correlation"""
    strength = int(round(255 * (1.0 - min(abs(value), 1.0))))
    if value >= 0:
        return f"#ff{strength:02x}{strength:02x}"
    return f"#{strength:02x}{strength:02x}ff"


def correlation_grid_svg(
    path: Union[str, Path],
    mean: np.ndarray,
    mask: np.ndarray,
    state_names: Sequence[str],
    title: str = "Mean correlation of memory cells with storages",
) -> Path:
    """Cells as columns, storages as rows; entries outside the mask left blank"""
    hidden, count = mean.shape
    cell_size = min(70.0, (WIDTH - MARGIN_LEFT - MARGIN_RIGHT - 60) / hidden)
    left = MARGIN_LEFT + 60
    top = TITLE_HEIGHT + 20
    body: List[str] = []
    for j in range(hidden):
        body.append(_text(left + (j + 0.5) * cell_size, top - 6, f"cell {j}", 11, "middle"))
    for k, name in enumerate(state_names):
        y = top + k * cell_size
        body.append(_text(left - 8, y + cell_size / 2 + 4, name, 12, "end"))
        for j in range(hidden):
            x = left + j * cell_size
            shown = bool(mask[j, k])
            fill = _diverging(float(mean[j, k])) if shown else "#ffffff"
            body.append(f'  <rect x="{x:.2f}" y="{y:.2f}" width="{cell_size:.2f}" height="{cell_size:.2f}" '
                        f'fill="{fill}" stroke="#cbd5e1" stroke-width="1"/>')
            if shown:
                body.append(_text(x + cell_size / 2, y + cell_size / 2 + 4, f"{mean[j, k]:.2f}", 11, "middle"))
    bottom = top + count * cell_size
    body.append(_text(left, bottom + 20, "|rho| > 0.5 shown; red positive, blue negative", 11))
    return _write(path, _document(bottom + 35, title, body))


def cell_inspection_svg(
    path: Union[str, Path],
    dates: pd.DatetimeIndex,
    attributions: pd.DataFrame,
    trajectory: np.ndarray,
    temperatures: np.ndarray,
    cell: int,
    title: Optional[str] = None,
) -> Path:
    """Attributions per variable, the cell trajectory and tmin/tmax on one date axis"""
    if not (len(dates) == len(attributions) == len(trajectory) == len(temperatures)):
        raise ValueError("inspection panels must share one date axis")
    xs = _x_positions(len(dates))
    body: List[str] = []

    top, bottom = TITLE_HEIGHT, TITLE_HEIGHT + 200
    variables = list(attributions.columns)
    low, high = _finite_range([attributions[v] for v in variables])
    body += _frame(top, bottom, "integrated gradients", low, high)
    for k, variable in enumerate(variables):
        body.append(_polyline(xs, _scale(attributions[variable], low, high, top, bottom), COLORS[k % len(COLORS)]))
    body += _legend([(v, COLORS[k % len(COLORS)]) for k, v in enumerate(variables)], top - 6)

    top, bottom = bottom + PANEL_GAP, bottom + PANEL_GAP + 140
    low, high = _finite_range([trajectory])
    body += _frame(top, bottom, f"memory cell {cell}", low, high)
    body.append(_polyline(xs, _scale(trajectory, low, high, top, bottom), COLORS[0], width=2))

    top, bottom = bottom + PANEL_GAP, bottom + PANEL_GAP + 140
    low, high = _finite_range([temperatures, np.zeros(1)])
    body += _frame(top, bottom, "tmin / tmax (degC)", low, high)
    zero = float(_scale(0.0, low, high, top, bottom))
    body.append(f'  <line x1="{MARGIN_LEFT}" y1="{zero:.2f}" x2="{WIDTH - MARGIN_RIGHT}" y2="{zero:.2f}" '
                f'stroke="#64748b" stroke-dasharray="2,3"/>')
    body.append(_polyline(xs, _scale(temperatures[:, 0], low, high, top, bottom), COLORS[0]))
    body.append(_polyline(xs, _scale(temperatures[:, 1], low, high, top, bottom), COLORS[1]))
    body += _legend([("tmin", COLORS[0]), ("tmax", COLORS[1])], top - 6)
    body += _date_axis(dates, bottom + 16)
    return _write(path, _document(bottom + 30, title or f"Integrated gradients of memory cell {cell}", body))
