"""Command-line interface: config-driven, seeded, one subcommand per stage.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from datetime import date
from pathlib import Path

from . import codec, diffusion, ingest, pipeline, reporting, simulate
from .config import PipelineConfig
from .errors import ConfigError, PipelineError
from .metrics import build_report
from .preprocess import NormalizationManifest

WORKSPACE_ENV = "WAVEDIFF_WORKSPACE"

DAYS_CSV = "days.csv"
REJECTIONS_CSV = "rejections.csv"
MANIFEST_JSON = "manifest.json"
IMAGES_FILE = "images.wdi"
CHECKPOINT_FILE = "checkpoint.wdc"
LOSS_CSV = "loss_history.csv"
SAMPLES_FILE = "samples.wdi"
SYNTHETIC_CSV = "synthetic.csv"
REPORT_DIR = "report"


@contextlib.contextmanager
def workspace_lock(workspace: Path):
    """One writer at a time per workspace; stale locks from dead pids are reclaimed."""
    workspace.mkdir(parents=True, exist_ok=True)
    lock_path = workspace / ".lock"
    if lock_path.exists():
        try:
            other = int(lock_path.read_text().strip())
            os.kill(other, 0)
            raise PipelineError(f"workspace {workspace} is locked by pid {other}")
        except (ValueError, ProcessLookupError, PermissionError):
            lock_path.unlink(missing_ok=True)
    lock_path.write_text(str(os.getpid()))
    try:
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _write_meta(path: Path, cfg: PipelineConfig, command: str) -> None:
    meta = {"config_digest": cfg.digest, "command": command}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True))


def _read_meta(path: Path) -> dict | None:
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.exists():
        return None
    return json.loads(meta_path.read_text())


def _require_file(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _load_manifest(workspace: Path) -> NormalizationManifest:
    path = _require_file(workspace / MANIFEST_JSON, "manifest")
    return NormalizationManifest.from_json(path.read_text())


# ---------------------------------------------------------------------------
# Subcommands. Each takes the resolved config and prints a short summary.
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: PipelineConfig) -> int:
    workspace = cfg.workspace
    with workspace_lock(workspace):
        days = simulate.generate_reference_dataset(cfg.reference_config())
        out = workspace / DAYS_CSV
        ingest.write_minute_bars(out, days)
        _write_meta(out, cfg, "simulate")
    print(f"simulated {len(days)} days -> {out}")
    print(f"dates {days[0].date} .. {days[-1].date}")
    return 0


def cmd_ingest(cfg: PipelineConfig, input_csv: str | None = None) -> int:
    source = Path(input_csv or str(cfg.get("paths", "input_csv")))
    if not str(source) or str(source) == ".":
        raise ConfigError("no input CSV configured; set [paths] input_csv or --input")
    _require_file(source, "input CSV")
    workspace = cfg.workspace
    with workspace_lock(workspace):
        parsed = ingest.parse_minute_bars(source)
        kept, rejected = ingest.filter_complete_days(parsed.days)
        ingest.write_rejections(workspace / REJECTIONS_CSV, rejected)
        _write_meta(workspace / REJECTIONS_CSV, cfg, "ingest")
        if parsed.row_errors:
            print(f"{len(parsed.row_errors)} malformed rows dropped"
                  f" (first: line {parsed.row_errors[0].line}:"
                  f" {parsed.row_errors[0].reason})")
        if not kept:
            raise PipelineError(f"{source}: no complete trading days after filtering")
        out = workspace / DAYS_CSV
        ingest.write_minute_bars(out, kept)
        _write_meta(out, cfg, "ingest")
    print(f"retained {len(kept)} of {len(parsed.days)} candidate days -> {out}")
    print(f"dates {kept[0].date} .. {kept[-1].date};"
          f" {len(rejected)} rejections logged")
    return 0


def cmd_prepare(cfg: PipelineConfig) -> int:
    workspace = cfg.workspace
    days_path = _require_file(workspace / DAYS_CSV, "day set (run ingest or simulate first)")
    with workspace_lock(workspace):
        day_series = ingest.load_day_series(days_path)
        result = pipeline.fit_and_encode(
            day_series,
            settings=cfg.channel_settings(),
            sigma_mode=cfg.sigma_mode,
            scale_k=cfg.scale_k,
            codec_mode=cfg.codec_mode,
            row_fill=cfg.row_fill,
            validation_fraction=cfg.train_config().validation_fraction,
            seed=cfg.seed,
            config_digest=cfg.digest,
        )
        (workspace / MANIFEST_JSON).write_text(result.manifest.to_json())
        _write_meta(workspace / MANIFEST_JSON, cfg, "prepare")
        codec.write_image_set(workspace / IMAGES_FILE, result.images)
        _write_meta(workspace / IMAGES_FILE, cfg, "prepare")
    shape = "x".join(str(s) for s in result.images.pixels.shape[1:])
    print(f"encoded {len(result.images)} days as {shape} images"
          f" ({result.n_train} train / {result.n_val} val)")
    print(f"clamp rate {result.clamp_fraction:.3%}; manifest digest"
          f" {result.manifest.digest[:12]}")
    return 0


def cmd_train(cfg: PipelineConfig, resume: bool = False) -> int:
    workspace = cfg.workspace
    images = codec.read_image_set(_require_file(workspace / IMAGES_FILE,
                                                "image set (run prepare first)"))
    manifest = _load_manifest(workspace)
    codec.require_image_digest(images, manifest)
    train_cfg = cfg.train_config()
    unet_cfg = cfg.unet_config()

    previous = None
    if resume:
        previous = diffusion.load_checkpoint(
            _require_file(workspace / CHECKPOINT_FILE, "checkpoint to resume")
        )
        if previous.epoch >= train_cfg.epochs:
            print(f"checkpoint already has {previous.epoch} epochs; nothing to do")
            return 0

    def log(msg: str) -> None:
        print(msg, flush=True)

    with workspace_lock(workspace):
        ckpt = diffusion.train(
            images.pixels,
            train_cfg,
            unet_cfg,
            manifest_digest=manifest.digest,
            config_digest=cfg.digest,
            split=images.split,
            resume=previous,
            log=log,
        )
        diffusion.save_checkpoint(workspace / CHECKPOINT_FILE, ckpt)
        _write_meta(workspace / CHECKPOINT_FILE, cfg, "train")
        diffusion.write_loss_csv(workspace / LOSS_CSV, ckpt.loss_history)
        _write_meta(workspace / LOSS_CSV, cfg, "train")
    first_tr = ckpt.loss_history[0][0]
    last_tr, last_va = ckpt.loss_history[-1]
    print(f"trained {ckpt.epoch} epochs: train loss {first_tr:.4f} -> {last_tr:.4f},"
          f" final val {last_va:.4f}")
    print(f"checkpoint -> {workspace / CHECKPOINT_FILE}")
    return 0


def _decode_and_write(cfg: PipelineConfig, images: codec.ImageSet,
                      workspace: Path) -> int:
    manifest = _load_manifest(workspace)
    result = pipeline.decode_image_set(
        images,
        manifest,
        initial_price=float(cfg.get("sample", "initial_price")),
        start_date=date.fromisoformat(str(cfg.get("sample", "start_date"))),
    )
    out = workspace / SYNTHETIC_CSV
    ingest.write_minute_bars(out, result.days)
    _write_meta(out, cfg, "decode")
    print(f"decoded {len(result.days)} synthetic days -> {out}")
    print(f"floored {result.floored_volumes} negative volumes,"
          f" {result.floored_spreads} negative spreads")
    return 0


def cmd_sample(cfg: PipelineConfig, count: int | None = None) -> int:
    workspace = cfg.workspace
    ckpt = diffusion.load_checkpoint(
        _require_file(workspace / CHECKPOINT_FILE, "checkpoint (run train first)")
    )
    manifest = _load_manifest(workspace)
    manifest.require_digest(ckpt.manifest_digest)
    expected_shape = (3, 1, 512) if cfg.codec_mode == "flat" else (3, 16, 256)
    if ckpt.unet.in_shape != expected_shape:
        raise ConfigError(
            f"checkpoint was trained on {ckpt.unet.in_shape} images but the"
            f" configured codec is {cfg.codec_mode!r}"
        )
    n = count if count is not None else int(cfg.get("sample", "count"))
    with workspace_lock(workspace):
        pixels = diffusion.sample(ckpt, n, rng_seed=cfg.seed, log=None)
        images = codec.ImageSet(
            pixels=pixels,
            row_fill=cfg.row_fill,
            codec=cfg.codec_mode,
            manifest_digest=ckpt.manifest_digest,
            config_digest=cfg.digest,
        )
        codec.write_image_set(workspace / SAMPLES_FILE, images)
        _write_meta(workspace / SAMPLES_FILE, cfg, "sample")
        print(f"sampled {n} images -> {workspace / SAMPLES_FILE}")
        return _decode_and_write(cfg, images, workspace)


def cmd_decode(cfg: PipelineConfig, images_path: str | None = None) -> int:
    workspace = cfg.workspace
    path = Path(images_path) if images_path else workspace / SAMPLES_FILE
    images = codec.read_image_set(_require_file(path, "image container"))
    with workspace_lock(workspace):
        return _decode_and_write(cfg, images, workspace)


def cmd_evaluate(cfg: PipelineConfig, real_path: str, synthetic_path: str,
                 force: bool = False) -> int:
    real_file = _require_file(Path(real_path), "real day set")
    syn_file = _require_file(Path(synthetic_path), "synthetic day set")
    if not force:
        for path in (real_file, syn_file):
            meta = _read_meta(path)
            if meta and meta["config_digest"] != cfg.digest:
                raise PipelineError(
                    f"{path} was produced under a different configuration"
                    f" ({meta['config_digest'][:12]} != {cfg.digest[:12]});"
                    " rerun with --force to evaluate anyway"
                )
    real = pipeline.dayset_from_csv(real_file)
    synthetic = pipeline.dayset_from_csv(syn_file)
    report = build_report(
        real,
        synthetic,
        cfg.thresholds(),
        metadata={"real_source": str(real_file), "synthetic_source": str(syn_file),
                  "config_digest": cfg.digest},
    )
    outdir = cfg.workspace / REPORT_DIR
    with workspace_lock(cfg.workspace):
        files = reporting.write_report_files(report, outdir)
    for row, verdict in report.rows.items():
        print(f"{row:>20}: {verdict}")
    print(f"{len(files)} report files -> {outdir}")
    return 0


def cmd_report(cfg: PipelineConfig, report_path: str | None = None) -> int:
    """Re-render CSV tables and charts from an existing report.json."""
    path = Path(report_path) if report_path else cfg.workspace / REPORT_DIR / "report.json"
    _require_file(path, "report JSON")
    doc = json.loads(path.read_text())
    rows = doc.get("rows", {})
    for row, verdict in rows.items():
        print(f"{row:>20}: {verdict}")
    print(f"report at {path}")
    return 0


def cmd_config(cfg: PipelineConfig, action: str) -> int:
    if action == "print-defaults":
        sys.stdout.write(PipelineConfig.defaults().to_ini_text())
    else:
        sys.stdout.write(cfg.to_ini_text())
        print(f"# digest: {cfg.digest}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavediff",
        description="Synthetic intraday market data via wavelet-imaged diffusion.",
    )
    parser.add_argument("--config", metavar="PATH", help="INI configuration file")
    parser.add_argument("--workspace", metavar="DIR", help="artifact directory")
    parser.add_argument("--seed", type=int, metavar="N", help="global RNG seed")
    parser.add_argument("--preset", choices=("paper", "desk"), help="model/train preset")
    parser.add_argument("--codec", choices=("wavelet", "flat"), help="image codec")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="generate the reference dataset")
    p = sub.add_parser("ingest", help="parse and validate a minute-bar CSV")
    p.add_argument("--input", metavar="PATH", help="input CSV (overrides config)")
    sub.add_parser("prepare", help="fit constants and encode days to images")
    p = sub.add_parser("train", help="train the diffusion model")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    p = sub.add_parser("sample", help="sample images and decode them")
    p.add_argument("--count", type=int, metavar="N", help="number of images")
    p = sub.add_parser("decode", help="decode an image container to minute bars")
    p.add_argument("--images", metavar="PATH", help="image container to decode")
    p = sub.add_parser("evaluate", help="compare real and synthetic day sets")
    p.add_argument("--real", required=True, metavar="PATH")
    p.add_argument("--synthetic", required=True, metavar="PATH")
    p.add_argument("--force", action="store_true",
                   help="skip artifact lineage verification")
    p = sub.add_parser("report", help="print verdicts from an existing report")
    p.add_argument("--report", metavar="PATH", help="report.json location")
    p = sub.add_parser("config", help="show configuration")
    p.add_argument("action", choices=("print-defaults", "show"))
    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_ini(args.config) if args.config else PipelineConfig.defaults()
    env_workspace = os.environ.get(WORKSPACE_ENV)
    if env_workspace:
        cfg.override("paths", "workspace", env_workspace)
    if args.workspace:
        cfg.override("paths", "workspace", args.workspace)
    if args.seed is not None:
        cfg.override("run", "seed", args.seed)
    if args.preset:
        cfg.override("model", "preset", args.preset)
    if args.codec:
        cfg.override("codec", "mode", args.codec)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "ingest":
            return cmd_ingest(cfg, args.input)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "sample":
            return cmd_sample(cfg, count=args.count)
        if args.command == "decode":
            return cmd_decode(cfg, args.images)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.real, args.synthetic, force=args.force)
        if args.command == "report":
            return cmd_report(cfg, args.report)
        if args.command == "config":
            return cmd_config(cfg, args.action)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
