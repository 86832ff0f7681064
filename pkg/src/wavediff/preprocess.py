"""Channel preprocessing: the invertible chain between raw minute series and
the unit-variance, length-512 sequences the wavelet codec consumes.

Forward, per channel:  value transform (log returns for prices, arsinh for
volumes) -> signed-power normalization -> winsorization -> mirror expansion.
Winsorization is the only lossy step; everything else inverts exactly.

All functions are vectorized over leading axes: a shape of ``(..., 390)``
in means ``(..., 512)`` out, so whole datasets move through in one call.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError, DigestMismatchError

RAW_LEN = 390
PADDED_LEN = 512
PAD_LEFT = (PADDED_LEN - RAW_LEN) // 2
PAD_RIGHT = PADDED_LEN - RAW_LEN - PAD_LEFT

MANIFEST_FORMAT = "wavediff-manifest/1"


class Channel(str, enum.Enum):
    LOG_RETURN = "log_return"
    SPREAD = "spread"
    VOLUME = "volume"


CHANNELS = (Channel.LOG_RETURN, Channel.SPREAD, Channel.VOLUME)


@dataclass(frozen=True)
class ChannelSettings:
    """Per-channel preprocessing knobs.

    power:    exponent p of the signed-power compression, >= 1.
    arsinh:   apply arsinh to raw values first (volumes only by default).
    winsor_z: clamp normalized values to [-z, z] sigma units.
    """

    power: float = 1.0
    arsinh: bool = False
    winsor_z: float = 10.0

    def check(self) -> None:
        if self.power < 1.0:
            raise ConfigError(f"power must be >= 1, got {self.power}")
        if self.winsor_z <= 0.0:
            raise ConfigError(f"winsor_z must be > 0, got {self.winsor_z}")


DEFAULT_SETTINGS: dict[Channel, ChannelSettings] = {
    Channel.LOG_RETURN: ChannelSettings(power=1.5),
    Channel.SPREAD: ChannelSettings(power=1.0),
    Channel.VOLUME: ChannelSettings(power=1.0, arsinh=True),
}


@dataclass(frozen=True)
class ChannelParams:
    """Fitted constants for one channel, everything needed to invert."""

    settings: ChannelSettings
    mu: float
    sigma: float
    band_scales: tuple[float, ...] = ()   # filled by the codec fit, 10 entries
    flat_scale: float = 0.0               # single scale for the 1x512 codec


@dataclass(frozen=True)
class NormalizationManifest:
    channels: Mapping[Channel, ChannelParams]
    sigma_mode: str = "powered"           # "powered" (default) or "raw"
    scale_k: float = 4.0
    series_length_raw: int = RAW_LEN
    series_length_padded: int = PADDED_LEN
    pad_left: int = PAD_LEFT
    pad_right: int = PAD_RIGHT
    format: str = MANIFEST_FORMAT

    def to_json(self) -> str:
        doc = {
            "format": self.format,
            "sigma_mode": self.sigma_mode,
            "scale_k": self.scale_k,
            "series_length_raw": self.series_length_raw,
            "series_length_padded": self.series_length_padded,
            "pad_left": self.pad_left,
            "pad_right": self.pad_right,
            "channels": {
                ch.value: {
                    "power": p.settings.power,
                    "arsinh": p.settings.arsinh,
                    "winsor_z": p.settings.winsor_z,
                    "mu": p.mu,
                    "sigma": p.sigma,
                    "band_scales": list(p.band_scales),
                    "flat_scale": p.flat_scale,
                }
                for ch, p in self.channels.items()
            },
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NormalizationManifest":
        doc = json.loads(text)
        if doc.get("format") != MANIFEST_FORMAT:
            raise ConfigError(f"unsupported manifest format {doc.get('format')!r}")
        channels = {}
        for name, c in doc["channels"].items():
            channels[Channel(name)] = ChannelParams(
                settings=ChannelSettings(c["power"], c["arsinh"], c["winsor_z"]),
                mu=c["mu"],
                sigma=c["sigma"],
                band_scales=tuple(c["band_scales"]),
                flat_scale=c["flat_scale"],
            )
        return cls(
            channels=channels,
            sigma_mode=doc["sigma_mode"],
            scale_k=doc["scale_k"],
            series_length_raw=doc["series_length_raw"],
            series_length_padded=doc["series_length_padded"],
            pad_left=doc["pad_left"],
            pad_right=doc["pad_right"],
        )

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def require_digest(self, digest: str) -> None:
        if digest != self.digest:
            raise DigestMismatchError(
                f"manifest digest {self.digest[:12]}... does not match artifact"
                f" digest {digest[:12]}..."
            )

    def with_scales(
        self,
        band_scales: Mapping[Channel, tuple[float, ...]],
        flat_scales: Mapping[Channel, float],
    ) -> "NormalizationManifest":
        channels = {
            ch: replace(p, band_scales=tuple(band_scales[ch]), flat_scale=flat_scales[ch])
            for ch, p in self.channels.items()
        }
        return replace(self, channels=channels)


def compute_log_returns(prices: np.ndarray) -> np.ndarray:
    """Log returns along the last axis; the first entry is 0 by convention,
    keeping the series aligned with the other channels."""
    prices = np.asarray(prices, dtype=np.float64)
    if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
        raise DataError("prices must be finite and > 0")
    out = np.zeros_like(prices)
    out[..., 1:] = np.log(prices[..., 1:] / prices[..., :-1])
    return out


def arsinh_transform(x: np.ndarray) -> np.ndarray:
    """ln(x + sqrt(x^2 + 1)): log-like for large values, defined at 0."""
    return np.arcsinh(np.asarray(x, dtype=np.float64))


def signed_power(v: np.ndarray, q: float) -> np.ndarray:
    """sign(v) * |v|**q, the odd extension that keeps powers monotone."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** q


def mirror_expand(series: np.ndarray, target_len: int = PADDED_LEN) -> np.ndarray:
    """Reflect both ends (edge sample not repeated) up to ``target_len``."""
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[-1]
    if n >= target_len:
        raise DataError(f"series length {n} must be < target {target_len}")
    left = (target_len - n) // 2
    right = target_len - n - left
    if max(left, right) > n - 1:
        raise DataError(f"cannot reflect {n} samples by ({left}, {right})")
    pad = [(0, 0)] * (series.ndim - 1) + [(left, right)]
    return np.pad(series, pad, mode="reflect")


def trim_expansion(padded: np.ndarray, raw_len: int = RAW_LEN) -> np.ndarray:
    """Inverse of :func:`mirror_expand`: cut the reflected pads away."""
    padded = np.asarray(padded, dtype=np.float64)
    total = padded.shape[-1]
    left = (total - raw_len) // 2
    return padded[..., left:left + raw_len]


def channel_values(channel: Channel, day_values: np.ndarray,
                   settings: ChannelSettings | None = None) -> np.ndarray:
    """Raw channel input -> the values normalization is fitted on.

    For LOG_RETURN pass prices, for VOLUME pass share counts, for SPREAD
    pass spreads; shapes ``(..., 390)``.
    """
    settings = settings or DEFAULT_SETTINGS[channel]
    if channel is Channel.LOG_RETURN:
        return compute_log_returns(day_values)
    if settings.arsinh:
        return arsinh_transform(day_values)
    return np.asarray(day_values, dtype=np.float64)


def fit_normalization(
    values_per_channel: Mapping[Channel, np.ndarray],
    settings: Mapping[Channel, ChannelSettings] | None = None,
    sigma_mode: str = "powered",
) -> dict[Channel, ChannelParams]:
    """Fit pooled mu and sigma per channel.

    ``sigma_mode="powered"`` (default) takes sigma over the signed-power
    transformed centered values, so normalized output has unit variance.
    ``"raw"`` takes sigma over the centered values themselves; kept as a
    compatibility mode.
    """
    if sigma_mode not in ("powered", "raw"):
        raise ConfigError(f"unknown sigma_mode {sigma_mode!r}")
    settings = settings or DEFAULT_SETTINGS
    fitted: dict[Channel, ChannelParams] = {}
    for channel, values in values_per_channel.items():
        cfg = settings[channel]
        cfg.check()
        pooled = np.asarray(values, dtype=np.float64).ravel()
        if pooled.size == 0:
            raise DataError(f"{channel.value}: empty fitting dataset")
        mu = float(pooled.mean())
        centered = pooled - mu
        basis = signed_power(centered, 1.0 / cfg.power) if sigma_mode == "powered" else centered
        sigma = float(basis.std())
        if not np.isfinite(sigma) or sigma <= 0.0:
            raise DataError(f"{channel.value}: constant channel, sigma = {sigma}")
        fitted[channel] = ChannelParams(settings=cfg, mu=mu, sigma=sigma)
    return fitted


def normalize(series: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Center, compress with the signed power, and scale to sigma units."""
    x = np.asarray(series, dtype=np.float64)
    return signed_power(x - params.mu, 1.0 / params.settings.power) / params.sigma


def winsorize(series: np.ndarray, z: float) -> np.ndarray:
    """Clamp to [-z, z]; input is expected in sigma units already."""
    return np.clip(np.asarray(series, dtype=np.float64), -z, z)


def inverse_normalize(series: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Invert :func:`normalize`; also undoes arsinh for channels that use it."""
    y = np.asarray(series, dtype=np.float64)
    x = params.mu + signed_power(y * params.sigma, params.settings.power)
    if params.settings.arsinh:
        x = np.sinh(x)
    return x


def forward_transform(
    values: np.ndarray, params: ChannelParams, apply_winsorize: bool = True
) -> np.ndarray:
    """Channel values ``(..., 390)`` -> padded normalized ``(..., 512)``."""
    y = normalize(values, params)
    if apply_winsorize:
        y = winsorize(y, params.settings.winsor_z)
    return mirror_expand(y)


def inverse_transform(padded: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Padded normalized ``(..., 512)`` -> channel values ``(..., 390)``.

    For LOG_RETURN the output is a returns series; rebuilding a price path
    needs an initial price (see :func:`returns_to_prices`).
    """
    return inverse_normalize(trim_expansion(padded), params)


def returns_to_prices(returns: np.ndarray, initial_price: float = 1.0) -> np.ndarray:
    """Price path from log returns: S_t = S_0 * exp(cumsum r)."""
    r = np.asarray(returns, dtype=np.float64)
    return initial_price * np.exp(np.cumsum(r, axis=-1))
