"""Stylized-fact measurement and the real-vs-synthetic comparison report.

Covered facts: fat-tailed return distributions (empirical PDFs in sigma
units), short memory of returns vs long memory of volatilities, spreads
and volumes (per-day ACFs averaged across days), intraday U-shapes
(per-minute means), and the cross-correlation structure of the four
channels. The report's pass/fail thresholds operationalize qualitative
judgments and are all tunable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .ingest import MINUTES_PER_DAY, TradingDay, derive_series
from .preprocess import compute_log_returns

CHANNEL_RETURNS = "log_returns"
CHANNEL_VOLATILITY = "volatilities"
CHANNEL_SPREADS = "spreads"
CHANNEL_VOLUMES = "volumes"


@dataclass
class DaySetSeries:
    """Aligned per-day channel matrices; spreads/volumes may be absent."""

    returns: np.ndarray                 # (n_days, 390)
    spreads: np.ndarray | None = None
    volumes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.returns = np.asarray(self.returns, dtype=np.float64)
        if self.returns.ndim != 2:
            raise DataError("returns must be (n_days, minutes)")
        for name in ("spreads", "volumes"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=np.float64)
                if val.shape != self.returns.shape:
                    raise DataError(f"{name} shape {val.shape} != returns {self.returns.shape}")
                setattr(self, name, val)

    @property
    def volatilities(self) -> np.ndarray:
        return np.abs(self.returns)

    @property
    def n_days(self) -> int:
        return self.returns.shape[0]

    def channel(self, name: str) -> np.ndarray | None:
        return {
            CHANNEL_RETURNS: self.returns,
            CHANNEL_VOLATILITY: self.volatilities,
            CHANNEL_SPREADS: self.spreads,
            CHANNEL_VOLUMES: self.volumes,
        }[name]

    @classmethod
    def from_trading_days(cls, days: Sequence[TradingDay]) -> "DaySetSeries":
        if not days:
            raise DataError("empty day set")
        mids, spreads, volumes = [], [], []
        for day in days:
            series = derive_series(day)
            mids.append(series.mid)
            spreads.append(series.spread)
            volumes.append(series.volume)
        return cls(
            returns=compute_log_returns(np.stack(mids)),
            spreads=np.stack(spreads),
            volumes=np.stack(volumes),
        )


@dataclass
class PdfTable:
    centers: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    reliable: np.ndarray       # counts >= 5
    n_values: int
    scale: float               # divisor used to reach sigma units

    @property
    def log_density(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.density)

    @property
    def bin_width(self) -> float:
        return float(self.centers[1] - self.centers[0])


def empirical_pdf(
    values: np.ndarray,
    bins: int = 200,
    value_range: tuple[float, float] = (-10.0, 10.0),
    standardize: bool = True,
) -> PdfTable:
    """Histogram density of pooled values in sigma units.

    ``standardize`` divides by the pooled standard deviation, so bin
    positions read as multiples of sigma; the density then integrates to 1
    over the covered range. Bins with fewer than 5 observations are flagged.
    """
    pooled = np.asarray(values, dtype=np.float64).ravel()
    if pooled.size == 0:
        raise DataError("empty input")
    scale = 1.0
    if standardize:
        scale = float(pooled.std())
        if scale <= 0 or not np.isfinite(scale):
            raise DataError("cannot standardize a constant series")
        pooled = pooled / scale
    counts, edges = np.histogram(pooled, bins=bins, range=value_range)
    total = counts.sum()
    if total == 0:
        raise DataError(f"no values fall inside {value_range}")
    width = (value_range[1] - value_range[0]) / bins
    return PdfTable(
        centers=(edges[:-1] + edges[1:]) / 2.0,
        density=counts / (total * width),
        counts=counts,
        reliable=counts >= 5,
        n_values=int(total),
        scale=scale,
    )


def acf(days: np.ndarray, max_lag: int = 100) -> np.ndarray:
    """Average of per-day biased autocorrelations, lags 0..max_lag.

    Each day is detrended by its own mean and normalized by its own
    variance; days never blend across boundaries. Zero-variance days are
    skipped with a warning.
    """
    x = np.asarray(days, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n_days, length = x.shape
    if max_lag >= length:
        raise DataError(f"max_lag {max_lag} must be < day length {length}")
    centered = x - x.mean(axis=1, keepdims=True)
    c0 = (centered**2).sum(axis=1) / length
    keep = c0 > 0
    if not np.all(keep):
        warnings.warn(f"skipping {int((~keep).sum())} zero-variance days in acf")
        centered = centered[keep]
        c0 = c0[keep]
        if centered.shape[0] == 0:
            raise DataError("all days have zero variance")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for lag in range(1, max_lag + 1):
        ck = (centered[:, :-lag] * centered[:, lag:]).sum(axis=1) / length
        out[lag] = float(np.mean(ck / c0))
    return out


def intraday_profile(days: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-minute mean across days plus the U-ratio (edges over mid-day)."""
    x = np.asarray(days, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != MINUTES_PER_DAY:
        raise DataError(f"expected (n_days, {MINUTES_PER_DAY}), got {x.shape}")
    if x.shape[0] < 30:
        warnings.warn(f"only {x.shape[0]} days; intraday profile will be noisy")
    profile = x.mean(axis=0)
    edges = (profile[:30].mean() + profile[360:].mean())
    mid = profile[180:210].mean()
    u_ratio = float(edges / (2.0 * mid)) if mid != 0 else float("nan")
    return profile, u_ratio


def cross_correlation_matrix(dayset: DaySetSeries) -> np.ndarray:
    """Pearson matrix over all pooled (day, minute) samples.

    Order: log returns, volatilities, spreads, volumes.
    """
    if dayset.spreads is None or dayset.volumes is None:
        raise DataError("cross correlations need all four channels")
    stacked = np.stack([
        dayset.returns.ravel(),
        dayset.volatilities.ravel(),
        dayset.spreads.ravel(),
        dayset.volumes.ravel(),
    ])
    if np.any(stacked.std(axis=1) == 0):
        raise DataError("zero-variance channel in cross-correlation input")
    return np.corrcoef(stacked)


CROSSCORR_LABELS = (CHANNEL_RETURNS, CHANNEL_VOLATILITY, CHANNEL_SPREADS, CHANNEL_VOLUMES)


@dataclass(frozen=True)
class ReportThresholds:
    """Tunable stand-ins for the qualitative pass/fail judgments."""

    tail_sigma_from: float = 3.0
    tail_sigma_to: float = 6.0
    tail_log_band: float = 1.0       # mean |log density gap| allowed in the tail
    acf_positive_lag: int = 10       # slow decay: ACF > 0 through this lag
    u_ratio_min: float = 1.1
    corr_band: float = 0.15
    corr_sign_epsilon: float = 0.03  # |real corr| below this exempts the sign check
    pdf_bins: int = 200
    acf_max_lag: int = 100

    def to_dict(self) -> dict:
        return {
            "tail_sigma_from": self.tail_sigma_from,
            "tail_sigma_to": self.tail_sigma_to,
            "tail_log_band": self.tail_log_band,
            "acf_positive_lag": self.acf_positive_lag,
            "u_ratio_min": self.u_ratio_min,
            "corr_band": self.corr_band,
            "corr_sign_epsilon": self.corr_sign_epsilon,
            "pdf_bins": self.pdf_bins,
            "acf_max_lag": self.acf_max_lag,
        }


@dataclass
class ChannelMetrics:
    pdf: PdfTable | None
    acf: np.ndarray | None
    profile: np.ndarray | None
    u_ratio: float | None


@dataclass
class StylizedFactsReport:
    rows: dict[str, str]                      # verdict per row: pass / fail / -
    details: dict[str, dict]
    real: dict[str, ChannelMetrics]
    synthetic: dict[str, ChannelMetrics]
    real_crosscorr: np.ndarray | None
    synthetic_crosscorr: np.ndarray | None
    thresholds: ReportThresholds
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def pdf_doc(p: PdfTable | None):
            if p is None:
                return None
            return {
                "centers": p.centers.tolist(),
                "density": p.density.tolist(),
                "counts": p.counts.tolist(),
                "n_values": p.n_values,
                "scale": p.scale,
            }

        def chan_doc(metrics: Mapping[str, ChannelMetrics]):
            return {
                name: {
                    "pdf": pdf_doc(m.pdf),
                    "acf": None if m.acf is None else m.acf.tolist(),
                    "profile": None if m.profile is None else m.profile.tolist(),
                    "u_ratio": m.u_ratio,
                }
                for name, m in metrics.items()
            }

        doc = {
            "format": "wavediff-report/1",
            "rows": self.rows,
            "details": self.details,
            "thresholds": self.thresholds.to_dict(),
            "metadata": self.metadata,
            "real": chan_doc(self.real),
            "synthetic": chan_doc(self.synthetic),
            "crosscorr": {
                "labels": list(CROSSCORR_LABELS),
                "real": None if self.real_crosscorr is None else self.real_crosscorr.tolist(),
                "synthetic": None
                if self.synthetic_crosscorr is None
                else self.synthetic_crosscorr.tolist(),
            },
        }
        return json.dumps(doc, sort_keys=True, indent=1)


def _measure(dayset: DaySetSeries, thresholds: ReportThresholds) -> dict[str, ChannelMetrics]:
    out: dict[str, ChannelMetrics] = {}
    lag = thresholds.acf_max_lag
    out[CHANNEL_RETURNS] = ChannelMetrics(
        pdf=empirical_pdf(dayset.returns, thresholds.pdf_bins, (-10.0, 10.0)),
        acf=acf(dayset.returns, lag),
        profile=None,
        u_ratio=None,
    )
    vol_profile, vol_u = intraday_profile(dayset.volatilities)
    out[CHANNEL_VOLATILITY] = ChannelMetrics(
        pdf=None, acf=acf(dayset.volatilities, lag), profile=vol_profile, u_ratio=vol_u
    )
    for name in (CHANNEL_SPREADS, CHANNEL_VOLUMES):
        data = dayset.channel(name)
        if data is None:
            out[name] = ChannelMetrics(None, None, None, None)
            continue
        profile, u_ratio = intraday_profile(data)
        out[name] = ChannelMetrics(
            pdf=empirical_pdf(data, thresholds.pdf_bins, (0.0, 10.0)),
            acf=acf(data, lag),
            profile=profile,
            u_ratio=u_ratio,
        )
    return out


def _fat_tail_row(real: PdfTable, synthetic: PdfTable, thr: ReportThresholds) -> tuple[str, dict]:
    region = (np.abs(real.centers) >= thr.tail_sigma_from) & (
        np.abs(real.centers) <= thr.tail_sigma_to
    )
    usable = region & real.reliable
    if usable.sum() < 3:
        return "-", {"reason": "too few reliable tail bins in the reference set"}
    # Zero synthetic bins still carry evidence: floor at half an observation.
    floor = 0.5 / (synthetic.n_values * synthetic.bin_width)
    syn_density = np.maximum(synthetic.density[usable], floor)
    gap = np.abs(np.log(syn_density) - real.log_density[usable])
    mean_gap = float(gap.mean())
    verdict = "pass" if mean_gap <= thr.tail_log_band else "fail"
    return verdict, {
        "mean_log_density_gap": mean_gap,
        "allowed": thr.tail_log_band,
        "bins_compared": int(usable.sum()),
    }


def _slow_decay_row(
    real: dict[str, ChannelMetrics],
    synthetic: dict[str, ChannelMetrics],
    thr: ReportThresholds,
) -> tuple[str, dict]:
    lag = thr.acf_positive_lag
    checked = {}
    for name in (CHANNEL_VOLATILITY, CHANNEL_SPREADS, CHANNEL_VOLUMES):
        syn = synthetic[name].acf
        if syn is None or real[name].acf is None:
            checked[name] = None
            continue
        checked[name] = bool(np.all(syn[1:lag + 1] > 0.0))
    evaluated = {k: v for k, v in checked.items() if v is not None}
    if not evaluated:
        return "-", {"reason": "no channels available"}
    verdict = "pass" if all(evaluated.values()) else "fail"
    return verdict, {"positive_through_lag": lag, "channels": checked}


def _seasonality_row(
    real: dict[str, ChannelMetrics],
    synthetic: dict[str, ChannelMetrics],
    thr: ReportThresholds,
) -> tuple[str, dict]:
    detail = {}
    failures = 0
    demanded = 0
    for name in (CHANNEL_VOLATILITY, CHANNEL_SPREADS, CHANNEL_VOLUMES):
        real_u = real[name].u_ratio
        syn_u = synthetic[name].u_ratio
        detail[name] = {"real_u_ratio": real_u, "synthetic_u_ratio": syn_u}
        if real_u is None or syn_u is None:
            continue
        if real_u > thr.u_ratio_min:
            demanded += 1
            if not syn_u > thr.u_ratio_min:
                failures += 1
    if demanded == 0:
        return "-", {"reason": "reference set shows no intraday seasonality", **detail}
    return ("pass" if failures == 0 else "fail"), detail


_KEY_CORR_ENTRIES = (
    (CHANNEL_VOLATILITY, CHANNEL_VOLUMES),
    (CHANNEL_SPREADS, CHANNEL_VOLUMES),
    (CHANNEL_VOLATILITY, CHANNEL_SPREADS),
)


def _crosscorr_row(
    real: np.ndarray | None, synthetic: np.ndarray | None, thr: ReportThresholds
) -> tuple[str, dict]:
    if real is None or synthetic is None:
        return "-", {"reason": "cross correlations need all four channels in both sets"}
    detail = {}
    signs_ok = True
    magnitudes_ok = True
    for a, b in _KEY_CORR_ENTRIES:
        i, j = CROSSCORR_LABELS.index(a), CROSSCORR_LABELS.index(b)
        r, s = float(real[i, j]), float(synthetic[i, j])
        sign_ok = True if abs(r) < thr.corr_sign_epsilon else (np.sign(r) == np.sign(s))
        mag_ok = abs(s - r) <= thr.corr_band
        detail[f"{a}~{b}"] = {
            "real": r, "synthetic": s, "sign_ok": bool(sign_ok), "magnitude_ok": bool(mag_ok),
        }
        signs_ok &= bool(sign_ok)
        magnitudes_ok &= bool(mag_ok)
    detail["signs_ok"] = signs_ok
    detail["magnitudes_ok"] = magnitudes_ok
    return ("pass" if signs_ok and magnitudes_ok else "fail"), detail


def build_report(
    real: DaySetSeries,
    synthetic: DaySetSeries,
    thresholds: ReportThresholds = ReportThresholds(),
    metadata: dict | None = None,
) -> StylizedFactsReport:
    """Measure both day sets and grade the synthetic one against the real."""
    if real.n_days == 0 or synthetic.n_days == 0:
        raise DataError("both day sets must be non-empty")
    real_metrics = _measure(real, thresholds)
    syn_metrics = _measure(synthetic, thresholds)

    def crosscorr(ds: DaySetSeries) -> np.ndarray | None:
        if ds.spreads is None or ds.volumes is None:
            return None
        return cross_correlation_matrix(ds)

    real_cc = crosscorr(real)
    syn_cc = crosscorr(synthetic)

    rows: dict[str, str] = {}
    details: dict[str, dict] = {}
    rows["fat_tail"], details["fat_tail"] = _fat_tail_row(
        real_metrics[CHANNEL_RETURNS].pdf, syn_metrics[CHANNEL_RETURNS].pdf, thresholds
    )
    rows["slow_decay"], details["slow_decay"] = _slow_decay_row(
        real_metrics, syn_metrics, thresholds
    )
    rows["seasonality"], details["seasonality"] = _seasonality_row(
        real_metrics, syn_metrics, thresholds
    )
    rows["cross_correlation"], details["cross_correlation"] = _crosscorr_row(
        real_cc, syn_cc, thresholds
    )

    meta = {"real_days": real.n_days, "synthetic_days": synthetic.n_days}
    meta.update(metadata or {})
    return StylizedFactsReport(
        rows=rows,
        details=details,
        real=real_metrics,
        synthetic=syn_metrics,
        real_crosscorr=real_cc,
        synthetic_crosscorr=syn_cc,
        thresholds=thresholds,
        metadata=meta,
    )
