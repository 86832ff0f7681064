"""File outputs for a stylized-facts report: JSON, one CSV table per
chart, and small dependency-free SVG renderings of each."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .metrics import (
    CHANNEL_RETURNS,
    CHANNEL_SPREADS,
    CHANNEL_VOLATILITY,
    CHANNEL_VOLUMES,
    CROSSCORR_LABELS,
    StylizedFactsReport,
)

_PDF_CHANNELS = (CHANNEL_RETURNS, CHANNEL_SPREADS, CHANNEL_VOLUMES)
_ACF_CHANNELS = (CHANNEL_RETURNS, CHANNEL_VOLATILITY, CHANNEL_SPREADS, CHANNEL_VOLUMES)
_PROFILE_CHANNELS = (CHANNEL_VOLATILITY, CHANNEL_SPREADS, CHANNEL_VOLUMES)


def _fmt(value) -> str:
    if value is None:
        return ""
    value = float(value)
    return repr(value) if np.isfinite(value) else ""


def write_report_files(report: StylizedFactsReport, outdir: str | Path,
                       svg: bool = True) -> list[Path]:
    """Write report.json plus one CSV (and optional SVG) per chart."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = [outdir / "report.json"]
    written[0].write_text(report.to_json())

    for name in _PDF_CHANNELS:
        real = report.real[name].pdf
        syn = report.synthetic[name].pdf
        if real is None and syn is None:
            continue
        path = outdir / f"pdf_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["center_sigma", "real_density", "synthetic_density"])
            centers = real.centers if real is not None else syn.centers
            for i, center in enumerate(centers):
                writer.writerow([
                    _fmt(center),
                    _fmt(real.density[i]) if real is not None else "",
                    _fmt(syn.density[i]) if syn is not None else "",
                ])
        written.append(path)
        if svg:
            series = {}
            if real is not None:
                series["real"] = (real.centers, _log10(real.density))
            if syn is not None:
                series["synthetic"] = (syn.centers, _log10(syn.density))
            written.append(
                polyline_chart(outdir / f"pdf_{name}.svg", f"density: {name}",
                               series, y_label="log10 density")
            )

    for name in _ACF_CHANNELS:
        real = report.real[name].acf
        syn = report.synthetic[name].acf
        if real is None and syn is None:
            continue
        path = outdir / f"acf_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lag", "real", "synthetic"])
            n = max(len(x) for x in (real, syn) if x is not None)
            for lag in range(n):
                writer.writerow([
                    lag,
                    _fmt(real[lag]) if real is not None and lag < len(real) else "",
                    _fmt(syn[lag]) if syn is not None and lag < len(syn) else "",
                ])
        written.append(path)
        if svg:
            series = {}
            if real is not None:
                series["real"] = (np.arange(1, len(real)), real[1:])
            if syn is not None:
                series["synthetic"] = (np.arange(1, len(syn)), syn[1:])
            written.append(
                polyline_chart(outdir / f"acf_{name}.svg", f"autocorrelation: {name}",
                               series, y_label="acf")
            )

    for name in _PROFILE_CHANNELS:
        real = report.real[name].profile
        syn = report.synthetic[name].profile
        if real is None and syn is None:
            continue
        path = outdir / f"intraday_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["minute", "real", "synthetic"])
            n = max(len(x) for x in (real, syn) if x is not None)
            for minute in range(n):
                writer.writerow([
                    minute,
                    _fmt(real[minute]) if real is not None else "",
                    _fmt(syn[minute]) if syn is not None else "",
                ])
        written.append(path)
        if svg:
            series = {}
            if real is not None:
                series["real"] = (np.arange(len(real)), real)
            if syn is not None:
                series["synthetic"] = (np.arange(len(syn)), syn)
            written.append(
                polyline_chart(outdir / f"intraday_{name}.svg",
                               f"intraday profile: {name}", series, y_label="mean")
            )

    path = outdir / "crosscorr.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["set", "channel", *CROSSCORR_LABELS])
        for tag, matrix in (("real", report.real_crosscorr),
                            ("synthetic", report.synthetic_crosscorr)):
            if matrix is None:
                continue
            for i, label in enumerate(CROSSCORR_LABELS):
                writer.writerow([tag, label, *(_fmt(v) for v in matrix[i])])
    written.append(path)
    return written


def _log10(density: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log10(density)


_COLORS = ("#000000", "#cc2222", "#2255cc", "#22aa55")


def polyline_chart(
    path: str | Path,
    title: str,
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    width: int = 640,
    height: int = 360,
    y_label: str = "",
) -> Path:
    """Render named (x, y) arrays as SVG polylines; non-finite points are skipped."""
    margin = 45
    xs_all = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys_all = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    ys_all = ys_all[np.isfinite(ys_all)]
    if ys_all.size == 0:
        ys_all = np.array([0.0, 1.0])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(v: float) -> float:
        return margin + (v - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(v: float) -> float:
        return height - margin - (v - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}"'
        f' height="{height - 2 * margin}" fill="none" stroke="#888"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle"'
        f' font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="12" y="{height / 2:.0f}" font-family="sans-serif" font-size="11"'
        f' transform="rotate(-90 12 {height / 2:.0f})" text-anchor="middle">{y_label}</text>',
        f'<text x="{margin}" y="{height - margin + 16}" font-family="sans-serif"'
        f' font-size="11">{x_lo:.4g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end"'
        f' font-family="sans-serif" font-size="11">{x_hi:.4g}</text>',
        f'<text x="{margin - 4}" y="{height - margin}" text-anchor="end"'
        f' font-family="sans-serif" font-size="11">{y_lo:.4g}</text>',
        f'<text x="{margin - 4}" y="{margin + 4}" text-anchor="end"'
        f' font-family="sans-serif" font-size="11">{y_hi:.4g}</text>',
    ]
    for idx, (name, (xs, ys)) in enumerate(series.items()):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys)
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs[ok], ys[ok]))
        color = _COLORS[idx % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2"'
                     f' points="{points}"/>')
        parts.append(
            f'<text x="{width - margin - 6}" y="{margin + 16 + 14 * idx}"'
            f' text-anchor="end" font-family="sans-serif" font-size="11"'
            f' fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts))
    return path
