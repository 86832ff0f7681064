"""Coefficient imaging: wavelet bands <-> 16x256 pixel tiles, plus the
flat 1x512 variant used for ablation runs.

Row k of the image holds band k, each coefficient tiled across a constant
block of columns; rows 10..15 are spare and either replicate the finest
band (default; decoding averages them, damping sampler noise) or stay zero.
Pixels are coefficient / band_scale clamped to [-1, 1], with band scales
calibrated so clamping is rare.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DigestMismatchError
from .preprocess import CHANNELS, Channel, NormalizationManifest
from .wavelet import band_sizes, haar_dwt, haar_idwt

IMAGE_ROWS = 16
IMAGE_COLS = 256
N_BANDS = 10
FLAT_COLS = 512

ROW_FILL_MODES = ("replicate-finest", "zero")
SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class CoefficientImage:
    """One encoded day: 3 channels (returns, spreads, volumes) of pixels."""

    pixels: np.ndarray            # (3, 16, 256) wavelet or (3, 1, 512) flat
    row_fill: str
    manifest_digest: str
    codec: str = "wavelet"

    def check(self) -> None:
        shape = self.pixels.shape
        if shape not in ((3, IMAGE_ROWS, IMAGE_COLS), (3, 1, FLAT_COLS)):
            raise DataError(f"unexpected image shape {shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise DataError("image contains non-finite pixels")
        if np.any(np.abs(self.pixels) > 1.0 + 1e-9):
            raise DataError("image pixels exceed [-1, 1]")


def _check_scales(scales: Sequence[float]) -> np.ndarray:
    arr = np.asarray(scales, dtype=np.float64)
    if arr.shape != (N_BANDS,) or np.any(arr <= 0):
        raise ConfigError(f"need {N_BANDS} positive band scales, got {arr}")
    return arr


def _check_row_fill(row_fill: str) -> None:
    if row_fill not in ROW_FILL_MODES:
        raise ConfigError(f"row_fill must be one of {ROW_FILL_MODES}, got {row_fill!r}")


def bands_to_rows(
    bands: list[np.ndarray],
    scales: Sequence[float],
    row_fill: str = "replicate-finest",
    clamp: bool = True,
) -> np.ndarray:
    """Tile bands ``[(..., size_k)]`` into pixel rows ``(..., 16, 256)``."""
    scales_arr = _check_scales(scales)
    _check_row_fill(row_fill)
    sizes = band_sizes(N_BANDS - 1)
    if [np.asarray(b).shape[-1] for b in bands] != sizes:
        raise DataError("band sizes do not match the 16x256 layout")

    batch = np.asarray(bands[0]).shape[:-1]
    out = np.zeros(batch + (IMAGE_ROWS, IMAGE_COLS), dtype=np.float64)
    for k, band in enumerate(bands):
        width = IMAGE_COLS // sizes[k]
        row = np.repeat(np.asarray(band, dtype=np.float64) / scales_arr[k], width, axis=-1)
        out[..., k, :] = row
    if row_fill == "replicate-finest":
        out[..., N_BANDS:, :] = out[..., N_BANDS - 1:N_BANDS, :]
    if clamp:
        np.clip(out, -1.0, 1.0, out=out)
    return out


def rows_to_bands(
    pixels: np.ndarray,
    scales: Sequence[float],
    row_fill: str = "replicate-finest",
) -> list[np.ndarray]:
    """Invert :func:`bands_to_rows` by block averaging.

    Under replicate-finest the finest band averages rows 9..15 jointly,
    trading the redundant rows for lower per-coefficient sampler noise.
    """
    scales_arr = _check_scales(scales)
    _check_row_fill(row_fill)
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[-2:] != (IMAGE_ROWS, IMAGE_COLS):
        raise DataError(f"expected (..., {IMAGE_ROWS}, {IMAGE_COLS}), got {pixels.shape}")

    sizes = band_sizes(N_BANDS - 1)
    bands: list[np.ndarray] = []
    for k, size in enumerate(sizes):
        width = IMAGE_COLS // size
        if k == N_BANDS - 1 and row_fill == "replicate-finest":
            block = pixels[..., N_BANDS - 1:, :].mean(axis=-2)
        else:
            block = pixels[..., k, :]
        coef = block.reshape(block.shape[:-1] + (size, width)).mean(axis=-1)
        bands.append(coef * scales_arr[k])
    return bands


def fit_band_scales(
    bands_per_channel: Mapping[Channel, list[np.ndarray]],
    k: float = 4.0,
) -> dict[Channel, tuple[float, ...]]:
    """Per-band luminance scales: k pooled standard deviations.

    With roughly Gaussian coefficients and the default k=4 the expected
    clamp rate is about 2*Phi(-4), i.e. a few per hundred thousand.
    """
    scales: dict[Channel, tuple[float, ...]] = {}
    for channel, bands in bands_per_channel.items():
        per_band = []
        for idx, band in enumerate(bands):
            std = float(np.asarray(band, dtype=np.float64).std())
            if std < SCALE_FLOOR:
                warnings.warn(
                    f"{channel.value} band {idx} has (near-)zero variance;"
                    f" scale floored at {SCALE_FLOOR}"
                )
                std = SCALE_FLOOR / k
            per_band.append(k * std)
        scales[channel] = tuple(per_band)
    return scales


def fit_flat_scales(
    padded_per_channel: Mapping[Channel, np.ndarray], k: float = 4.0
) -> dict[Channel, float]:
    """Single-scale analog for the 1x512 codec: k pooled stds of the values."""
    out: dict[Channel, float] = {}
    for channel, padded in padded_per_channel.items():
        std = float(np.asarray(padded, dtype=np.float64).std())
        if std < SCALE_FLOOR:
            warnings.warn(f"{channel.value}: flat scale floored at {SCALE_FLOOR}")
            std = SCALE_FLOOR / k
        out[channel] = k * std
    return out


def encode_images(
    padded_per_channel: Mapping[Channel, np.ndarray],
    manifest: NormalizationManifest,
    row_fill: str = "replicate-finest",
    clamp: bool = True,
) -> np.ndarray:
    """Encode padded series ``(..., 512)`` per channel into ``(..., 3, 16, 256)``."""
    planes = []
    for channel in CHANNELS:
        params = manifest.channels[channel]
        if len(params.band_scales) != N_BANDS:
            raise ConfigError(f"{channel.value}: manifest has no fitted band scales")
        bands = haar_dwt(padded_per_channel[channel])
        planes.append(bands_to_rows(bands, params.band_scales, row_fill, clamp))
    return np.stack(planes, axis=-3)


def decode_images(
    pixels: np.ndarray,
    manifest: NormalizationManifest,
    row_fill: str = "replicate-finest",
) -> dict[Channel, np.ndarray]:
    """Decode ``(..., 3, 16, 256)`` back to padded series per channel."""
    out: dict[Channel, np.ndarray] = {}
    pixels = np.asarray(pixels, dtype=np.float64)
    for idx, channel in enumerate(CHANNELS):
        params = manifest.channels[channel]
        bands = rows_to_bands(pixels[..., idx, :, :], params.band_scales, row_fill)
        out[channel] = haar_idwt(bands)
    return out


def encode_images_flat(
    padded_per_channel: Mapping[Channel, np.ndarray],
    manifest: NormalizationManifest,
    clamp: bool = True,
) -> np.ndarray:
    """Place padded values directly into one pixel row per channel."""
    planes = []
    for channel in CHANNELS:
        scale = manifest.channels[channel].flat_scale
        if scale <= 0:
            raise ConfigError(f"{channel.value}: manifest has no fitted flat scale")
        row = np.asarray(padded_per_channel[channel], dtype=np.float64) / scale
        if clamp:
            row = np.clip(row, -1.0, 1.0)
        planes.append(row[..., None, :])
    return np.stack(planes, axis=-3)


def decode_images_flat(
    pixels: np.ndarray, manifest: NormalizationManifest
) -> dict[Channel, np.ndarray]:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[-2:] != (1, FLAT_COLS):
        raise DataError(f"expected (..., 1, {FLAT_COLS}), got {pixels.shape}")
    out: dict[Channel, np.ndarray] = {}
    for idx, channel in enumerate(CHANNELS):
        scale = manifest.channels[channel].flat_scale
        out[channel] = pixels[..., idx, 0, :] * scale
    return out


def encode_day(
    padded_per_channel: Mapping[Channel, np.ndarray],
    manifest: NormalizationManifest,
    row_fill: str = "replicate-finest",
    codec: str = "wavelet",
    clamp: bool = True,
) -> CoefficientImage:
    """Encode one day's three padded series into a single color image."""
    for channel in CHANNELS:
        if np.asarray(padded_per_channel[channel]).shape != (manifest.series_length_padded,):
            raise DataError(f"{channel.value}: expected one padded series")
    if codec == "wavelet":
        pixels = encode_images(padded_per_channel, manifest, row_fill, clamp)
    elif codec == "flat":
        pixels = encode_images_flat(padded_per_channel, manifest, clamp)
    else:
        raise ConfigError(f"unknown codec {codec!r}")
    return CoefficientImage(pixels, row_fill, manifest.digest, codec)


def decode_image(
    image: CoefficientImage, manifest: NormalizationManifest
) -> dict[Channel, np.ndarray]:
    """Decode one image back into padded series; digests must match."""
    manifest.require_digest(image.manifest_digest)
    if image.codec == "wavelet":
        return decode_images(image.pixels, manifest, image.row_fill)
    if image.codec == "flat":
        return decode_images_flat(image.pixels, manifest)
    raise ConfigError(f"unknown codec {image.codec!r}")


# ---------------------------------------------------------------------------
# Image set container: the training-set interchange format.
# ---------------------------------------------------------------------------

_MAGIC = b"WDIM"
_VERSION = 1


@dataclass
class ImageSet:
    pixels: np.ndarray            # (n, 3, h, w) float32
    row_fill: str
    codec: str
    manifest_digest: str
    config_digest: str = ""
    dates: list[str] | None = None
    split: list[str] | None = None   # "train" / "val" per image

    def __len__(self) -> int:
        return self.pixels.shape[0]


def write_image_set(path: str | Path, images: ImageSet) -> None:
    pixels = np.ascontiguousarray(images.pixels, dtype="<f4")
    header = {
        "shape": list(pixels.shape),
        "row_fill": images.row_fill,
        "codec": images.codec,
        "manifest_digest": images.manifest_digest,
        "config_digest": images.config_digest,
        "dates": images.dates,
        "split": images.split,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(pixels.tobytes())


def read_image_set(path: str | Path) -> ImageSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataError(f"{path}: not an image container (magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        header = json.loads(fh.read(header_len))
        shape = tuple(header["shape"])
        data = fh.read()
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise DataError(f"{path}: truncated pixel data ({len(data)} != {expected} bytes)")
    pixels = np.frombuffer(data, dtype="<f4").reshape(shape)
    return ImageSet(
        pixels=pixels.copy(),
        row_fill=header["row_fill"],
        codec=header["codec"],
        manifest_digest=header["manifest_digest"],
        config_digest=header.get("config_digest", ""),
        dates=header.get("dates"),
        split=header.get("split"),
    )


def require_image_digest(images: ImageSet, manifest: NormalizationManifest) -> None:
    if images.manifest_digest != manifest.digest:
        raise DigestMismatchError(
            "image set was encoded with a different manifest"
            f" ({images.manifest_digest[:12]}... != {manifest.digest[:12]}...)"
        )


# ---------------------------------------------------------------------------
# PNG export, 8-bit, inspection only; never read back into the pipeline.
# ---------------------------------------------------------------------------

def write_png(path: str | Path, pixels: np.ndarray) -> None:
    """Write one (3, h, w) image in [-1, 1] as an 8-bit RGB PNG."""
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"expected (3, h, w), got {arr.shape}")
    rgb = np.rint(255.0 * (np.clip(arr, -1.0, 1.0) + 1.0) / 2.0).astype(np.uint8)
    _, height, width = rgb.shape
    raster = rgb.transpose(1, 2, 0)  # h, w, rgb

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    scanlines = b"".join(b"\x00" + raster[y].tobytes() for y in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(b"\x89PNG\r\n\x1a\n")
        fh.write(chunk(b"IHDR", ihdr))
        fh.write(chunk(b"IDAT", zlib.compress(scanlines, 9)))
        fh.write(chunk(b"IEND", b""))
