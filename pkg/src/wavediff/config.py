"""Pipeline configuration: a flat INI document with typed defaults.

Every run resolves to a full key set (defaults overlaid with the user's
file and CLI flags); the sha256 of that resolved text is the config digest
stamped into artifacts so later stages can verify lineage.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .diffusion import TRAIN_PRESETS, UNET_PRESETS, TrainConfig
from .errors import ConfigError
from .metrics import ReportThresholds
from .preprocess import Channel, ChannelSettings
from .simulate import ReferenceModelConfig
from .unet import UNetConfig

DEFAULTS: dict[str, dict[str, object]] = {
    "paths": {
        "input_csv": "",
        "workspace": "workspace",
    },
    "simulate": {
        "n_days": 512,
        "garch_omega": 2.5e-9,
        "garch_alpha": 0.09,
        "garch_beta": 0.90,
        "u_shape_amplitude": 2.0,
        "spread_coupling": 0.5,
        "volume_coupling": 1.0,
        "base_price": 100.0,
        "start_date": "2005-01-03",
    },
    "channels": {
        "returns_power": 1.5,
        "spreads_power": 1.0,
        "volumes_power": 1.0,
        "winsorize_z": 10.0,
        "volume_arsinh": True,
        "sigma_mode": "powered",
    },
    "codec": {
        "mode": "wavelet",
        "row_fill": "replicate-finest",
        "scale_k": 4.0,
    },
    "model": {
        "preset": "desk",
    },
    "train": {
        # empty string means "use the preset value"
        "epochs": "",
        "batch_size": "",
        "learning_rate": "",
        "warmup_steps": "",
        "timesteps": "",
        "beta_start": "",
        "beta_end": "",
        "validation_fraction": "",
    },
    "sample": {
        "count": 128,
        "initial_price": 1.0,
        "start_date": "2100-01-04",
    },
    "metrics": {
        "tail_sigma_from": 3.0,
        "tail_sigma_to": 6.0,
        "tail_log_band": 1.0,
        "acf_positive_lag": 10,
        "u_ratio_min": 1.1,
        "corr_band": 0.15,
        "corr_sign_epsilon": 0.03,
        "pdf_bins": 200,
        "acf_max_lag": 100,
    },
    "run": {
        "seed": 0,
        "device": "cpu",
    },
}


def _coerce(section: str, key: str, raw: str, default: object) -> object:
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from exc
    return raw


@dataclass
class PipelineConfig:
    values: dict[str, dict[str, object]]

    # -- construction -------------------------------------------------

    @classmethod
    def defaults(cls) -> "PipelineConfig":
        return cls({s: dict(kv) for s, kv in DEFAULTS.items()})

    @classmethod
    def from_ini(cls, path: str | Path) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        cfg = cls.defaults()
        for section in parser.sections():
            if section not in cfg.values:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cfg.values[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                cfg.values[section][key] = _coerce(
                    section, key, raw, DEFAULTS[section][key]
                )
        return cfg

    def override(self, section: str, key: str, value: object) -> None:
        if section not in self.values or key not in self.values[section]:
            raise ConfigError(f"unknown config entry [{section}] {key}")
        self.values[section][key] = value

    # -- serialization ------------------------------------------------

    def to_ini_text(self) -> str:
        buf = io.StringIO()
        for section in sorted(self.values):
            buf.write(f"[{section}]\n")
            for key in sorted(self.values[section]):
                value = self.values[section][key]
                if isinstance(value, bool):
                    value = "true" if value else "false"
                buf.write(f"{key} = {value}\n")
            buf.write("\n")
        return buf.getvalue()

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_ini_text().encode()).hexdigest()

    # -- typed accessors ----------------------------------------------

    def get(self, section: str, key: str) -> object:
        return self.values[section][key]

    @property
    def workspace(self) -> Path:
        return Path(str(self.get("paths", "workspace")))

    @property
    def seed(self) -> int:
        return int(self.get("run", "seed"))

    @property
    def codec_mode(self) -> str:
        mode = str(self.get("codec", "mode"))
        if mode not in ("wavelet", "flat"):
            raise ConfigError(f"codec mode must be wavelet or flat, got {mode!r}")
        return mode

    @property
    def row_fill(self) -> str:
        return str(self.get("codec", "row_fill"))

    @property
    def scale_k(self) -> float:
        return float(self.get("codec", "scale_k"))

    @property
    def sigma_mode(self) -> str:
        return str(self.get("channels", "sigma_mode"))

    def channel_settings(self) -> dict[Channel, ChannelSettings]:
        z = float(self.get("channels", "winsorize_z"))
        settings = {
            Channel.LOG_RETURN: ChannelSettings(
                power=float(self.get("channels", "returns_power")), winsor_z=z
            ),
            Channel.SPREAD: ChannelSettings(
                power=float(self.get("channels", "spreads_power")), winsor_z=z
            ),
            Channel.VOLUME: ChannelSettings(
                power=float(self.get("channels", "volumes_power")),
                arsinh=bool(self.get("channels", "volume_arsinh")),
                winsor_z=z,
            ),
        }
        for s in settings.values():
            s.check()
        return settings

    @property
    def preset(self) -> str:
        name = str(self.get("model", "preset"))
        if name not in TRAIN_PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(TRAIN_PRESETS)}")
        return name

    def train_config(self) -> TrainConfig:
        base = TRAIN_PRESETS[self.preset].to_dict()
        for key in ("epochs", "batch_size", "warmup_steps", "timesteps"):
            raw = self.get("train", key)
            if raw != "":
                base[key] = int(raw)
        for key in ("learning_rate", "beta_start", "beta_end", "validation_fraction"):
            raw = self.get("train", key)
            if raw != "":
                base[key] = float(raw)
        base["rng_seed"] = self.seed
        base["device"] = str(self.get("run", "device"))
        return TrainConfig.from_dict(base)

    def unet_config(self) -> UNetConfig:
        cfg = UNET_PRESETS[self.preset]
        if self.codec_mode == "flat":
            cfg = UNetConfig(
                stage_channels=cfg.stage_channels,
                blocks_per_stage=cfg.blocks_per_stage,
                attention_stages=cfg.attention_stages,
                in_shape=(3, 1, 512),
                time_embed_dim=cfg.time_embed_dim,
            )
        return cfg

    def reference_config(self) -> ReferenceModelConfig:
        return ReferenceModelConfig(
            n_days=int(self.get("simulate", "n_days")),
            garch_omega=float(self.get("simulate", "garch_omega")),
            garch_alpha=float(self.get("simulate", "garch_alpha")),
            garch_beta=float(self.get("simulate", "garch_beta")),
            u_shape_amplitude=float(self.get("simulate", "u_shape_amplitude")),
            spread_coupling=float(self.get("simulate", "spread_coupling")),
            volume_coupling=float(self.get("simulate", "volume_coupling")),
            base_price=float(self.get("simulate", "base_price")),
            rng_seed=self.seed,
            start_date=date.fromisoformat(str(self.get("simulate", "start_date"))),
        )

    def thresholds(self) -> ReportThresholds:
        return ReportThresholds(
            tail_sigma_from=float(self.get("metrics", "tail_sigma_from")),
            tail_sigma_to=float(self.get("metrics", "tail_sigma_to")),
            tail_log_band=float(self.get("metrics", "tail_log_band")),
            acf_positive_lag=int(self.get("metrics", "acf_positive_lag")),
            u_ratio_min=float(self.get("metrics", "u_ratio_min")),
            corr_band=float(self.get("metrics", "corr_band")),
            corr_sign_epsilon=float(self.get("metrics", "corr_sign_epsilon")),
            pdf_bins=int(self.get("metrics", "pdf_bins")),
            acf_max_lag=int(self.get("metrics", "acf_max_lag")),
        )
