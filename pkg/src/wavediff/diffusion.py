"""DDPM core: noise schedule, forward corruption, training loop, ancestral
sampler, and the checkpoint container.

Training minimizes the mean squared error between true and predicted noise
at uniformly drawn steps. Everything is seeded: batch order, step draws,
noise, and validation batches derive from (seed, epoch) so runs reproduce
exactly and resumed runs line up with uninterrupted ones.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError, PipelineError
from .unet import DESK_UNET, PAPER_UNET, NoiseUNet, UNetConfig

SAMPLING_ALPHA_BAR_MAX = 0.01


@dataclass(frozen=True)
class BetaSchedule:
    timesteps: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def check_sampling_ready(self) -> None:
        """Schedules used for train/sample must end in (almost) pure noise."""
        if self.alpha_bar[-1] >= SAMPLING_ALPHA_BAR_MAX:
            raise ConfigError(
                f"alpha_bar at the final step is {self.alpha_bar[-1]:.4g};"
                f" must be < {SAMPLING_ALPHA_BAR_MAX} (raise beta_end or timesteps)"
            )


def make_beta_schedule(timesteps: int, beta_start: float = 1e-4,
                       beta_end: float = 0.02) -> BetaSchedule:
    """Linear variance schedule inclusive of both endpoints."""
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return BetaSchedule(timesteps, beta_start, beta_end, beta, alpha, alpha_bar)


def forward_diffuse(
    x0: torch.Tensor,
    t: torch.Tensor | int,
    noise: torch.Tensor,
    schedule: BetaSchedule,
) -> torch.Tensor:
    """Closed-form corruption: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.

    ``t`` is 1-based (1..T), scalar or one entry per batch element.
    """
    if x0.shape != noise.shape:
        raise DataError(f"shape mismatch: x0 {tuple(x0.shape)} vs noise {tuple(noise.shape)}")
    t_idx = torch.as_tensor(t, device=x0.device, dtype=torch.long) - 1
    if torch.any(t_idx < 0) or torch.any(t_idx >= schedule.timesteps):
        raise DataError(f"t out of range 1..{schedule.timesteps}")
    abar = torch.from_numpy(schedule.alpha_bar).to(x0.device, x0.dtype)[t_idx]
    while abar.ndim < x0.ndim:
        abar = abar.unsqueeze(-1)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * noise


def epsilon_predict(model: nn.Module, x_t: torch.Tensor, t: torch.Tensor | int) -> torch.Tensor:
    """Model forward with the output contract enforced."""
    t_tensor = torch.as_tensor(t, device=x_t.device, dtype=torch.float32)
    out = model(x_t, t_tensor)
    if out.shape != x_t.shape:
        raise PipelineError(f"model returned {tuple(out.shape)} for input {tuple(x_t.shape)}")
    if not torch.all(torch.isfinite(out)):
        raise PipelineError("model produced non-finite noise prediction")
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-4
    warmup_steps: int = 500
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    validation_fraction: float = 0.194
    rng_seed: int = 0
    device: str = "cpu"

    def check(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "warmup_steps": self.warmup_steps,
            "timesteps": self.timesteps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "validation_fraction": self.validation_fraction,
            "rng_seed": self.rng_seed,
            "device": self.device,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


PAPER_TRAIN = TrainConfig()
# Small enough to finish on a laptop CPU; beta_end raised so the forward
# process still ends in noise despite the short horizon, and the learning
# rate raised to make the 640-update budget count.
DESK_TRAIN = TrainConfig(
    epochs=20,
    batch_size=16,
    learning_rate=4e-4,
    warmup_steps=50,
    timesteps=200,
    beta_start=1e-4,
    beta_end=0.05,
)

TRAIN_PRESETS = {"paper": PAPER_TRAIN, "desk": DESK_TRAIN}
UNET_PRESETS = {"paper": PAPER_UNET, "desk": DESK_UNET}


@dataclass
class DiffusionCheckpoint:
    unet: UNetConfig
    train: TrainConfig
    epoch: int
    loss_history: list[tuple[float, float]]
    manifest_digest: str
    config_digest: str = ""
    seed_lineage: list[int] = field(default_factory=list)
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict | None = None

    @property
    def schedule(self) -> BetaSchedule:
        return make_beta_schedule(self.train.timesteps, self.train.beta_start,
                                  self.train.beta_end)

    def build_model(self) -> NoiseUNet:
        model = NoiseUNet(self.unet)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.weights.items()}
        model.load_state_dict(state)
        return model


def _derive_seed(*parts) -> int:
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2s(text.encode()).digest()[:8], "little")


def _split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(_derive_seed(seed, "split"))
    order = rng.permutation(n)
    n_val = max(1, int(round(n * fraction)))
    if n_val >= n:
        raise DataError(f"validation split leaves no training data (n={n})")
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(
    pixels: np.ndarray,
    cfg: TrainConfig,
    unet_cfg: UNetConfig,
    manifest_digest: str = "",
    config_digest: str = "",
    split: Sequence[str] | None = None,
    resume: DiffusionCheckpoint | None = None,
    log: Callable[[str], None] | None = None,
) -> DiffusionCheckpoint:
    """Fit the noise predictor; returns a resumable checkpoint.

    ``pixels`` is the full image set (n, c, h, w); the train/validation
    split comes from ``split`` labels when given, otherwise from a seeded
    shuffle at ``cfg.validation_fraction``.
    """
    cfg.check()
    data = torch.as_tensor(np.asarray(pixels, dtype=np.float32))
    if data.ndim != 4:
        raise DataError(f"expected (n, c, h, w) pixels, got {tuple(data.shape)}")
    if tuple(data.shape[1:]) != unet_cfg.in_shape:
        raise DataError(
            f"image shape {tuple(data.shape[1:])} does not match model"
            f" input {unet_cfg.in_shape}"
        )
    device = torch.device(cfg.device)

    if split is not None:
        if len(split) != len(data):
            raise DataError("split labels do not cover the dataset")
        train_idx = np.flatnonzero(np.asarray(split) == "train")
        val_idx = np.flatnonzero(np.asarray(split) == "val")
        if len(train_idx) == 0 or len(val_idx) == 0:
            raise DataError("split must contain both train and val images")
    else:
        train_idx, val_idx = _split_indices(len(data), cfg.validation_fraction, cfg.rng_seed)
    train_data = data[train_idx].to(device)
    val_data = data[val_idx].to(device)

    schedule = make_beta_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    schedule.check_sampling_ready()
    abar = torch.from_numpy(schedule.alpha_bar).to(device, torch.float32)

    torch.manual_seed(_derive_seed(cfg.rng_seed, "init"))
    model = NoiseUNet(unet_cfg).to(device)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)

    start_epoch = 0
    history: list[tuple[float, float]] = []
    lineage = [cfg.rng_seed]
    if resume is not None:
        if resume.unet != unet_cfg:
            raise ConfigError("checkpoint model configuration differs")
        model.load_state_dict(
            {k: torch.from_numpy(v.copy()) for k, v in resume.weights.items()}
        )
        if resume.optimizer is not None:
            optimizer.load_state_dict(_optim_state_from_numpy(resume.optimizer))
        start_epoch = resume.epoch
        history = list(resume.loss_history)
        lineage = list(resume.seed_lineage) or lineage

    n_train = len(train_data)
    steps_per_epoch = (n_train + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    global_step = start_epoch * steps_per_epoch

    # One fixed validation draw: epochs become comparable on the same batches.
    val_gen = torch.Generator().manual_seed(_derive_seed(cfg.rng_seed, "val"))
    val_t = torch.randint(1, cfg.timesteps + 1, (len(val_data),), generator=val_gen)
    val_noise = torch.randn(val_data.shape, generator=val_gen).to(device)

    mse = nn.MSELoss()
    for epoch in range(start_epoch, cfg.epochs):
        gen = torch.Generator().manual_seed(_derive_seed(cfg.rng_seed, "epoch", epoch))
        order = torch.randperm(n_train, generator=gen)
        model.train()
        epoch_losses = []
        for step in range(steps_per_epoch):
            batch = train_data[order[step * cfg.batch_size:(step + 1) * cfg.batch_size]]
            t = torch.randint(1, cfg.timesteps + 1, (len(batch),), generator=gen).to(device)
            noise = torch.randn(batch.shape, generator=gen).to(device)
            x_t = _diffuse_gathered(batch, t, noise, abar)

            lr = cfg.learning_rate * _lr_scale(global_step, cfg.warmup_steps, total_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr

            optimizer.zero_grad()
            loss = mse(model(x_t, t.to(torch.float32)), noise)
            if not torch.isfinite(loss):
                raise PipelineError(
                    f"non-finite loss at epoch {epoch + 1} step {step + 1}:"
                    f" lr={lr:.3g}, batch std {batch.std().item():.3g};"
                    " lower the learning rate or check the image scales"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
            global_step += 1

        model.eval()
        val_losses = []
        with torch.inference_mode():
            for start in range(0, len(val_data), cfg.batch_size):
                sl = slice(start, start + cfg.batch_size)
                x_t = _diffuse_gathered(val_data[sl], val_t[sl].to(device), val_noise[sl], abar)
                val_losses.append(
                    mse(model(x_t, val_t[sl].to(device, torch.float32)), val_noise[sl]).item()
                    * len(val_data[sl])
                )
        train_mean = float(np.mean(epoch_losses))
        val_mean = float(np.sum(val_losses) / len(val_data))
        history.append((train_mean, val_mean))
        _warn_on_divergence(history)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: train {train_mean:.4f} val {val_mean:.4f}")

    return DiffusionCheckpoint(
        unet=unet_cfg,
        train=cfg,
        epoch=cfg.epochs,
        loss_history=history,
        manifest_digest=manifest_digest,
        config_digest=config_digest,
        seed_lineage=lineage,
        weights={k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()},
        optimizer=_optim_state_to_numpy(optimizer.state_dict()),
    )


def _diffuse_gathered(x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor,
                      abar: torch.Tensor) -> torch.Tensor:
    a = abar[t - 1][:, None, None, None]
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * noise


def _lr_scale(step: int, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup, then cosine decay to zero over the remaining steps."""
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def _warn_on_divergence(history: list[tuple[float, float]], window: int = 5,
                        ratio: float = 1.2) -> None:
    vals = [v for _, v in history]
    if len(vals) < window:
        return
    best = min(vals)
    if all(v > ratio * best for v in vals[-window:]):
        warnings.warn(
            f"validation loss has stayed > {ratio:.2f}x its minimum for the"
            f" last {window} epochs; the model may be overfitting"
        )


def sample(
    checkpoint: DiffusionCheckpoint,
    n: int,
    rng_seed: int,
    micro_batch: int = 8,
    clamp: bool = True,
    model: nn.Module | None = None,
    log: Callable[[str], None] | None = None,
) -> np.ndarray:
    """Ancestral sampling of ``n`` images, deterministic in ``rng_seed``.

    Each image draws from its own generator derived from (seed, index),
    so results do not depend on ``micro_batch``.
    """
    shape = checkpoint.unet.in_shape
    if n == 0:
        return np.empty((0,) + shape, dtype=np.float32)
    schedule = checkpoint.schedule
    schedule.check_sampling_ready()
    net = model if model is not None else checkpoint.build_model()
    net.eval()

    beta = torch.from_numpy(schedule.beta).to(torch.float32)
    alpha = torch.from_numpy(schedule.alpha).to(torch.float32)
    abar = torch.from_numpy(schedule.alpha_bar).to(torch.float32)

    out = np.empty((n,) + shape, dtype=np.float32)
    with torch.inference_mode():
        for start in range(0, n, micro_batch):
            count = min(micro_batch, n - start)
            gens = [
                torch.Generator().manual_seed(_derive_seed(rng_seed, "sample", start + i))
                for i in range(count)
            ]
            x = torch.stack([torch.randn(shape, generator=g) for g in gens])
            for t in range(schedule.timesteps, 0, -1):
                eps = net(x, torch.full((count,), float(t)))
                mean = (x - (beta[t - 1] / torch.sqrt(1.0 - abar[t - 1])) * eps) \
                    / torch.sqrt(alpha[t - 1])
                if t > 1:
                    z = torch.stack([torch.randn(shape, generator=g) for g in gens])
                    x = mean + torch.sqrt(beta[t - 1]) * z
                else:
                    x = mean
            if clamp:
                x = torch.clamp(x, -1.0, 1.0)
            out[start:start + count] = x.numpy()
            if log is not None:
                log(f"sampled {start + count}/{n} images")
    if not np.all(np.isfinite(out)):
        raise PipelineError("sampler produced non-finite pixels")
    return out


# ---------------------------------------------------------------------------
# Checkpoint container.
# ---------------------------------------------------------------------------

_MAGIC = b"WDCK"
_VERSION = 1


def _optim_state_to_numpy(state_dict: dict) -> dict:
    out = {"param_groups": state_dict["param_groups"], "state": {}}
    for idx, entry in state_dict["state"].items():
        out["state"][str(idx)] = {
            k: v.detach().cpu().numpy().copy() if torch.is_tensor(v) else v
            for k, v in entry.items()
        }
    return out


def _optim_state_from_numpy(doc: dict) -> dict:
    state = {}
    for idx, entry in doc["state"].items():
        state[int(idx)] = {
            k: torch.from_numpy(v.copy()) if isinstance(v, np.ndarray) else v
            for k, v in entry.items()
        }
    return {"param_groups": doc["param_groups"], "state": state}


def save_checkpoint(path: str | Path, ckpt: DiffusionCheckpoint) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for name, arr in ckpt.weights.items():
        tensors.append((f"model/{name}", np.asarray(arr, dtype=np.float32)))
    optim_meta: dict = {}
    if ckpt.optimizer is not None:
        optim_meta = {"param_groups": ckpt.optimizer["param_groups"], "scalars": {}}
        for idx, entry in ckpt.optimizer["state"].items():
            for key, value in entry.items():
                if isinstance(value, np.ndarray):
                    tensors.append((f"optim/{idx}/{key}", np.asarray(value, dtype=np.float32)))
                else:
                    optim_meta["scalars"][f"{idx}/{key}"] = value

    directory = []
    offset = 0
    for name, arr in tensors:
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = {
        "unet": ckpt.unet.to_dict(),
        "train": ckpt.train.to_dict(),
        "epoch": ckpt.epoch,
        "loss_history": ckpt.loss_history,
        "manifest_digest": ckpt.manifest_digest,
        "config_digest": ckpt.config_digest,
        "seed_lineage": ckpt.seed_lineage,
        "optim_meta": optim_meta,
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> DiffusionCheckpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len))
        payload = fh.read()

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + size * 4
        if end > len(payload):
            raise DataError(f"{path}: truncated tensor data for {entry['name']}")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()

    weights = {
        name[len("model/"):]: arr
        for name, arr in tensors.items()
        if name.startswith("model/")
    }
    optimizer = None
    meta = header.get("optim_meta") or {}
    if meta:
        state: dict[str, dict] = {}
        for name, arr in tensors.items():
            if not name.startswith("optim/"):
                continue
            _, idx, key = name.split("/", 2)
            state.setdefault(idx, {})[key] = arr
        for scalar_key, value in meta.get("scalars", {}).items():
            idx, key = scalar_key.split("/", 1)
            state.setdefault(idx, {})[key] = value
        optimizer = {"param_groups": meta["param_groups"], "state": state}

    return DiffusionCheckpoint(
        unet=UNetConfig.from_dict(header["unet"]),
        train=TrainConfig.from_dict(header["train"]),
        epoch=header["epoch"],
        loss_history=[tuple(pair) for pair in header["loss_history"]],
        manifest_digest=header["manifest_digest"],
        config_digest=header.get("config_digest", ""),
        seed_lineage=list(header.get("seed_lineage", [])),
        weights=weights,
        optimizer=optimizer,
    )


def write_loss_csv(path: str | Path, history: Sequence[tuple[float, float]]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (tr, va) in enumerate(history, start=1):
            fh.write(f"{i},{tr!r},{va!r}\n")
