"""Stage logic shared by the CLI subcommands: fit constants and encode a
dataset, and decode sampled images back into minute-bar days."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import codec
from .diffusion import _split_indices
from .errors import DataError
from .ingest import ColumnMap, DaySeries, TradingDay, filter_complete_days, parse_minute_bars
from .metrics import DaySetSeries
from .preprocess import (
    CHANNELS,
    Channel,
    ChannelSettings,
    NormalizationManifest,
    channel_values,
    fit_normalization,
    forward_transform,
    inverse_transform,
    returns_to_prices,
)
from .simulate import _nth_weekday
from .wavelet import haar_dwt


@dataclass
class PrepareResult:
    manifest: NormalizationManifest
    images: codec.ImageSet
    clamp_fraction: float
    n_train: int
    n_val: int


def _raw_channels(day_series: Sequence[DaySeries]) -> dict[Channel, np.ndarray]:
    return {
        Channel.LOG_RETURN: np.stack([d.mid for d in day_series]),
        Channel.SPREAD: np.stack([d.spread for d in day_series]),
        Channel.VOLUME: np.stack([d.volume for d in day_series]),
    }


def fit_and_encode(
    day_series: Sequence[DaySeries],
    settings: Mapping[Channel, ChannelSettings],
    sigma_mode: str = "powered",
    scale_k: float = 4.0,
    codec_mode: str = "wavelet",
    row_fill: str = "replicate-finest",
    validation_fraction: float = 0.194,
    seed: int = 0,
    config_digest: str = "",
) -> PrepareResult:
    """Fit normalization and luminance scales on the training split only,
    then encode every day into one image."""
    if not day_series:
        raise DataError("no days to prepare")
    raw = _raw_channels(day_series)
    values = {
        ch: channel_values(ch, raw[ch], settings[ch]) for ch in CHANNELS
    }
    train_idx, val_idx = _split_indices(len(day_series), validation_fraction, seed)
    split = np.full(len(day_series), "val", dtype=object)
    split[train_idx] = "train"

    fitted = fit_normalization(
        {ch: values[ch][train_idx] for ch in CHANNELS}, settings, sigma_mode
    )
    base = NormalizationManifest(channels=fitted, sigma_mode=sigma_mode, scale_k=scale_k)

    padded = {
        ch: forward_transform(values[ch], base.channels[ch]) for ch in CHANNELS
    }
    bands = {ch: haar_dwt(padded[ch]) for ch in CHANNELS}
    band_scales = codec.fit_band_scales(
        {ch: [b[train_idx] for b in bands[ch]] for ch in CHANNELS}, scale_k
    )
    flat_scales = codec.fit_flat_scales(
        {ch: padded[ch][train_idx] for ch in CHANNELS}, scale_k
    )
    manifest = base.with_scales(band_scales, flat_scales)

    # clamp rate counted per coefficient (per value in flat mode)
    if codec_mode == "wavelet":
        clamped = total = 0
        for ch in CHANNELS:
            for k, band in enumerate(bands[ch]):
                clamped += int(np.sum(np.abs(band) > band_scales[ch][k]))
                total += band.size
        clamp_fraction = clamped / total
        pixels = np.stack(
            [codec.bands_to_rows(bands[ch], band_scales[ch], row_fill) for ch in CHANNELS],
            axis=-3,
        )
    elif codec_mode == "flat":
        pixels = codec.encode_images_flat(padded, manifest, clamp=False)
        clamp_fraction = float(np.mean(np.abs(pixels) > 1.0))
        np.clip(pixels, -1.0, 1.0, out=pixels)
    else:
        raise DataError(f"unknown codec mode {codec_mode!r}")

    images = codec.ImageSet(
        pixels=pixels.astype(np.float32),
        row_fill=row_fill,
        codec=codec_mode,
        manifest_digest=manifest.digest,
        config_digest=config_digest,
        dates=[d.date.isoformat() for d in day_series],
        split=[str(s) for s in split],
    )
    return PrepareResult(
        manifest=manifest,
        images=images,
        clamp_fraction=clamp_fraction,
        n_train=len(train_idx),
        n_val=len(val_idx),
    )


@dataclass
class DecodeResult:
    days: list[TradingDay]
    dayset: DaySetSeries
    floored_volumes: int
    floored_spreads: int


def decode_image_set(
    images: codec.ImageSet,
    manifest: NormalizationManifest,
    initial_price: float = 1.0,
    start_date: date = date(2100, 1, 4),
) -> DecodeResult:
    """Sampled images -> synthetic trading days.

    Volumes and spreads may come out slightly negative after the inverse
    transforms of model output; both are floored at zero and counted.
    """
    codec.require_image_digest(images, manifest)
    pixels = np.asarray(images.pixels, dtype=np.float64)
    if images.codec == "wavelet":
        padded = codec.decode_images(pixels, manifest, images.row_fill)
    else:
        padded = codec.decode_images_flat(pixels, manifest)

    returns = inverse_transform(padded[Channel.LOG_RETURN], manifest.channels[Channel.LOG_RETURN])
    spreads = inverse_transform(padded[Channel.SPREAD], manifest.channels[Channel.SPREAD])
    volumes = inverse_transform(padded[Channel.VOLUME], manifest.channels[Channel.VOLUME])
    # First-minute return is 0 by the same convention ingestion applies.
    returns[..., 0] = 0.0

    floored_spreads = int(np.sum(spreads < 0))
    spreads = np.maximum(spreads, 0.0)
    floored_volumes = int(np.sum(volumes < 0))
    volumes = np.maximum(volumes, 0.0)

    mid = returns_to_prices(returns, initial_price)
    # Keep bid > 0 even if a sampled spread dwarfs the price level.
    spreads = np.minimum(spreads, 1.99 * mid)
    bid = mid - spreads / 2.0
    ask = mid + spreads / 2.0

    days = [
        TradingDay.from_arrays(_nth_weekday(start_date, i), bid[i], ask[i], volumes[i])
        for i in range(len(mid))
    ]
    dayset = DaySetSeries(returns=returns, spreads=spreads, volumes=volumes)
    return DecodeResult(days, dayset, floored_volumes, floored_spreads)


def dayset_from_csv(path: str | Path, schema: ColumnMap | None = None) -> DaySetSeries:
    parsed = parse_minute_bars(path, schema)
    kept, _ = filter_complete_days(parsed.days)
    if not kept:
        raise DataError(f"{path}: no complete trading days")
    return DaySetSeries.from_trading_days(kept)
