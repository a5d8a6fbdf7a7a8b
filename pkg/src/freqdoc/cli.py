"""Command-line pipeline driver.

Subcommands cover the whole flow: tokenize images into coefficient cubes and
visual tokens, reconstruct a canvas from a saved cube, build instruction
datasets, score model responses, and benchmark the two input modes.

Exit codes: 0 on success, 1 for configuration or validation problems, 2 when
a run completed but some items failed (the failures are reported).
Manifests and reports carry no timestamps, so reruns with the same inputs
and configuration are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from collections import Counter, OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import encoder as enc
from . import evaluation as evl
from . import frequency as freq
from . import imaging
from . import instructions as instr
from .errors import FormatError, ValidationError

LOG = logging.getLogger("freqdoc")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2

_SAVE_KINDS = ("cube", "adapter", "tokens", "projected")


@dataclass(frozen=True)
class RunConfig:
    """Effective settings for a run; workers never affects outputs."""

    canvas_side: int = 2560
    quality: int = 50
    cube_mode: str = "dequantized"
    channel_order: str = "zigzag"
    input_mode: str = "dct"
    fill: int = 255
    seed: int = 0
    workers: int = 1
    embed_dim: int = 128
    depths: tuple[int, ...] = (2, 2, 2, 2)
    heads: tuple[int, ...] = (4, 8, 16, 32)
    window: int = 8
    mlp_ratio: float = 4.0
    llm_dim: int = 4096
    batch_size: int = 8
    perception_fraction: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if self.canvas_side < 64 or self.canvas_side % 64:
            raise ValidationError(
                f"canvas_side {self.canvas_side} must be a positive multiple of 64"
            )
        if not 1 <= self.quality <= 100:
            raise ValidationError(f"quality {self.quality} outside [1, 100]")
        if self.cube_mode not in ("raw", "quantized", "dequantized"):
            raise ValidationError(f"unknown cube_mode {self.cube_mode!r}")
        if self.channel_order not in ("zigzag", "row_major"):
            raise ValidationError(f"unknown channel_order {self.channel_order!r}")
        if self.input_mode not in ("dct", "rgb_flatten"):
            raise ValidationError(f"unknown input_mode {self.input_mode!r}")
        if not 0 <= self.fill <= 255:
            raise ValidationError(f"fill {self.fill} outside [0, 255]")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if not 0.0 <= self.perception_fraction <= 1.0:
            raise ValidationError("perception_fraction must lie in [0, 1]")


_CONFIG_SECTIONS: dict[str, dict[str, type | str]] = {
    "run": {
        "canvas_side": int,
        "quality": int,
        "cube_mode": str,
        "channel_order": str,
        "input_mode": str,
        "fill": int,
        "seed": int,
        "workers": int,
    },
    "encoder": {
        "embed_dim": int,
        "depths": "ints",
        "heads": "ints",
        "window": int,
        "mlp_ratio": float,
        "llm_dim": int,
    },
    "mix": {
        "batch_size": int,
        "perception_fraction": float,
    },
}


def load_config(path: str | Path | None) -> RunConfig:
    """Read an INI file; unknown sections or keys are errors."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    kwargs = {}
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise ValidationError(f"{path}: unknown section [{section}]")
        fields = _CONFIG_SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in fields:
                raise ValidationError(f"{path}: unknown key {key!r} in [{section}]")
            kind = fields[key]
            try:
                if kind is int:
                    kwargs[key] = int(raw)
                elif kind is float:
                    kwargs[key] = float(raw)
                elif kind == "ints":
                    kwargs[key] = tuple(int(v.strip()) for v in raw.split(","))
                else:
                    kwargs[key] = raw.strip()
            except ValueError:
                raise ValidationError(f"{path}: bad value {raw!r} for {key}") from None
    return RunConfig(**kwargs)


def config_hash(cfg: RunConfig) -> str:
    """Digest of every output-affecting setting; workers is excluded."""
    payload = dataclasses.asdict(cfg)
    payload.pop("workers")
    lines = []
    for key in sorted(payload):
        value = payload[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def encoder_config(cfg: RunConfig) -> enc.EncoderConfig:
    return enc.EncoderConfig(
        embed_dim=cfg.embed_dim,
        depths=cfg.depths,
        heads=cfg.heads,
        window=cfg.window,
        mlp_ratio=cfg.mlp_ratio,
        llm_dim=cfg.llm_dim,
        grid_side=cfg.canvas_side // 8,
        seed=cfg.seed,
    )


def _adapter_weights(cfg: RunConfig) -> freq.AdapterWeights:
    rng = np.random.default_rng(cfg.seed)
    projection = enc.truncated_normal(rng, (cfg.embed_dim, freq.CUBE_CHANNELS))
    return freq.AdapterWeights(
        projection=projection.astype(np.float32),
        bias=np.zeros(cfg.embed_dim, dtype=np.float32),
    )


def _image_cube(path: str | Path, cfg: RunConfig) -> tuple[freq.FrequencyCube, imaging.CanvasTransform]:
    image = imaging.load_image(path, fill=cfg.fill)
    canvas, transform = imaging.resize_and_pad(image, cfg.canvas_side, fill=cfg.fill)
    if cfg.input_mode == "rgb_flatten":
        return freq.rgb_flatten_cube(canvas), transform
    planes = imaging.subsample_chroma(imaging.rgb_to_ycbcr(canvas))
    tables = None
    if cfg.cube_mode in ("quantized", "dequantized"):
        tables = freq.build_quant_tables(cfg.quality)
    cube = freq.extract_frequency_cube(
        planes, tables=tables, mode=cfg.cube_mode, channel_order=cfg.channel_order
    )
    return cube, transform


class _Parser(argparse.ArgumentParser):
    # Bad command lines are validation errors, not argparse's exit(2).
    def error(self, message: str):
        raise ValidationError(message)


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="parallel workers for item loops")
    common.add_argument("--out", type=Path, help="output directory")

    parser = _Parser(prog="freqdoc", description="frequency-domain document pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", parents=[common],
                       help="turn images into coefficient cubes and visual tokens")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--mode", choices=("dct", "rgb_flatten"),
                   help="input representation (default from config)")
    p.add_argument("--save", default="cube,tokens",
                   help="comma list from: " + ",".join(_SAVE_KINDS))
    p.add_argument("--force", action="store_true",
                   help="overwrite outputs produced under a different configuration")
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("reconstruct", parents=[common],
                       help="invert a saved coefficient cube back to a PNG canvas")
    p.add_argument("cube_file", type=Path)
    p.add_argument("out_image", type=Path)
    p.add_argument("--cube-mode", choices=("raw", "quantized", "dequantized"),
                   help="how the cube values are scaled (default from config)")
    p.add_argument("--reference", type=Path,
                   help="source image; letterboxed the same way, then luma PSNR is printed")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("build-dataset", parents=[common],
                       help="turn JSONL annotations into instruction records")
    p.add_argument("annotations", type=Path)
    p.add_argument("--stage", choices=instr.STAGES, default="pretrain")
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("eval", parents=[common],
                       help="score JSONL responses and write a report")
    p.add_argument("responses", type=Path)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", parents=[common],
                       help="time the pipeline stages per input mode")
    p.add_argument("image", type=Path)
    p.add_argument("--mode", choices=("dct", "rgb_flatten"),
                   help="restrict to one input mode")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=_cmd_bench)
    return parser


def _effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    mode = getattr(args, "mode", None)
    if mode is not None:
        overrides["input_mode"] = mode
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise ValidationError("--out is required for this command")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _map_items(items, worker, workers: int):
    if workers > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, items))
    return [worker(item) for item in items]


def _cmd_tokenize(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    out_dir = _require_out(args)
    save = tuple(s.strip() for s in args.save.split(",") if s.strip())
    if not save or any(s not in _SAVE_KINDS for s in save):
        raise ValidationError(f"--save must name kinds from {','.join(_SAVE_KINDS)}")

    stems = [p.stem for p in args.images]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise ValidationError(f"duplicate output stems: {', '.join(dupes)}")

    digest = config_hash(cfg)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists() and not args.force:
        previous = json.loads(manifest_path.read_text(encoding="utf-8"))
        if previous.get("config_hash") != digest:
            raise ValidationError(
                f"{manifest_path} was produced under a different configuration; "
                "rerun with --force to replace it"
            )

    enc_cfg = encoder_config(cfg)
    params = enc.init_params(enc_cfg)
    adapter = _adapter_weights(cfg)

    def work(path: Path):
        try:
            cube, _ = _image_cube(path, cfg)
            arrays = {"cube": cube.data}
            if {"adapter", "tokens", "projected"} & set(save):
                feature = freq.adapter_project(cube, adapter).astype(np.float32)
                arrays["adapter"] = feature
                if {"tokens", "projected"} & set(save):
                    tokens = enc.encoder_forward(feature, params, enc_cfg)
                    arrays["tokens"] = tokens.data
                    if "projected" in save:
                        arrays["projected"] = enc.project_tokens(tokens, params)
            entries = {}
            for kind in save:
                filename = f"{path.stem}.{kind}.fqc1"
                freq.write_tensor(out_dir / filename, arrays[kind])
                entries[kind] = {
                    "file": filename,
                    "shape": list(arrays[kind].shape),
                }
            return path.stem, entries, None
        except (ValidationError, FormatError, OSError) as exc:
            LOG.warning("tokenize failed for %s: %s", path, exc)
            return path.stem, None, str(exc)

    results = _map_items(list(args.images), work, cfg.workers)
    images = {stem: entries for stem, entries, err in results if err is None}
    errors = {stem: err for stem, _, err in results if err is not None}
    manifest = {
        "command": "tokenize",
        "config_hash": digest,
        "mode": cfg.input_mode,
        "cube_mode": cfg.cube_mode,
        "channel_order": cfg.channel_order,
        "canvas_side": cfg.canvas_side,
        "images": images,
        "errors": errors,
    }
    _write_json(manifest_path, manifest)
    LOG.info("tokenized %d images, %d failures", len(images), len(errors))
    return EXIT_PARTIAL if errors else EXIT_OK


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    mode = args.cube_mode or cfg.cube_mode
    data = freq.read_tensor(args.cube_file)
    if data.ndim != 3 or data.shape[0] != freq.CUBE_CHANNELS:
        raise ValidationError(
            f"{args.cube_file}: shape {data.shape} is not a coefficient cube"
        )
    cube = freq.FrequencyCube(data=data, mode=mode, channel_order=cfg.channel_order)
    tables = freq.build_quant_tables(cfg.quality) if mode == "quantized" else None
    rgb = freq.reconstruct_canvas(cube, tables=tables)
    args.out_image.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(args.out_image, format="PNG")

    if args.reference is not None:
        reference = imaging.load_image(args.reference, fill=cfg.fill)
        ref_canvas, _ = imaging.resize_and_pad(reference, cube.canvas_side, fill=cfg.fill)
        out_image = imaging.RgbImage(
            width=rgb.shape[1], height=rgb.shape[0], data=rgb
        )
        value = imaging.psnr(
            imaging.rgb_to_ycbcr(ref_canvas).y, imaging.rgb_to_ycbcr(out_image).y
        )
        print(f"psnr_luma_db {value:.2f}")
    return EXIT_OK


def _cmd_build_dataset(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    out_dir = _require_out(args)
    lines = args.annotations.read_text(encoding="utf-8").splitlines()
    build = instr.build_dataset(
        lines,
        stage=args.stage,
        seed=cfg.seed,
        canvas_side=cfg.canvas_side,
        workers=cfg.workers,
    )
    (out_dir / "records.jsonl").write_text(
        "".join(r.to_json() + "\n" for r in build.records), encoding="utf-8"
    )
    (out_dir / "rejects.jsonl").write_text(
        "".join(r.to_json() + "\n" for r in build.rejects), encoding="utf-8"
    )
    stats = {
        "stage": build.stage,
        "seed": build.seed,
        "records": len(build.records),
        "rejects": len(build.rejects),
        "tasks": dict(sorted(Counter(r.task for r in build.records).items())),
    }
    if args.stage == "finetune":
        plan = instr.MixPlan(
            batch_size=cfg.batch_size,
            perception_fraction=cfg.perception_fraction,
            seed=cfg.seed,
        )
        perception = [r for r in build.records if r.task in instr.PERCEPTION_TASKS]
        comprehension = [r for r in build.records if r.task in instr.COMPREHENSION_TASKS]
        batches, report = instr.mix_batches(perception, comprehension, plan)
        (out_dir / "batches.jsonl").write_text(
            "".join(
                json.dumps({"index": i, "ids": [r.id for r in batch]}) + "\n"
                for i, batch in enumerate(batches)
            ),
            encoding="utf-8",
        )
        stats["mixture"] = {
            "batches": report.batches,
            "batch_size": plan.batch_size,
            "perception_per_batch": plan.perception_per_batch,
            "perception_used": report.perception_used,
            "comprehension_used": report.comprehension_used,
            "perception_dropped": report.perception_dropped,
            "comprehension_dropped": report.comprehension_dropped,
        }
    _write_json(out_dir / "stats.json", stats)
    LOG.info("built %d records, %d rejects", len(build.records), len(build.rejects))
    return EXIT_PARTIAL if build.rejects else EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    _effective_config(args)
    out_dir = _require_out(args)
    lines = args.responses.read_text(encoding="utf-8").splitlines()
    samples = []
    rejects = []
    for number, line in enumerate(lines, start=1):
        try:
            samples.append(evl.parse_sample(json.loads(line)))
        except (ValidationError, json.JSONDecodeError) as exc:
            rejects.append({"line_number": number, "reason": str(exc)})
    if not samples:
        raise ValidationError(f"{args.responses}: no evaluable samples")

    grouped: "OrderedDict[str, list]" = OrderedDict()
    for sample in samples:
        grouped.setdefault(sample.dataset, []).append(sample)
    report = evl.aggregate_report(
        evl.score_dataset(group) for group in grouped.values()
    )
    (out_dir / "report.json").write_text(evl.report_to_json(report), encoding="utf-8")
    table = evl.render_table(report)
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    (out_dir / "rejects.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in rejects), encoding="utf-8"
    )
    sys.stdout.write(table)
    return EXIT_PARTIAL if rejects else EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    if args.repeats < 1:
        raise ValidationError("--repeats must be at least 1")
    modes = (cfg.input_mode,) if args.mode else ("dct", "rgb_flatten")
    enc_cfg = encoder_config(cfg)
    params = enc.init_params(enc_cfg)
    adapter = _adapter_weights(cfg)

    results = {}
    for mode in modes:
        mode_cfg = dataclasses.replace(cfg, input_mode=mode)
        stage_times: dict[str, list[float]] = {}
        for _ in range(args.repeats):
            marks = [("start", time.perf_counter())]
            image = imaging.load_image(args.image, fill=cfg.fill)
            marks.append(("decode", time.perf_counter()))
            canvas, _ = imaging.resize_and_pad(image, cfg.canvas_side, fill=cfg.fill)
            marks.append(("canvas", time.perf_counter()))
            if mode == "rgb_flatten":
                cube = freq.rgb_flatten_cube(canvas)
            else:
                planes = imaging.subsample_chroma(imaging.rgb_to_ycbcr(canvas))
                tables = None
                if mode_cfg.cube_mode in ("quantized", "dequantized"):
                    tables = freq.build_quant_tables(cfg.quality)
                cube = freq.extract_frequency_cube(
                    planes, tables=tables, mode=mode_cfg.cube_mode,
                    channel_order=cfg.channel_order,
                )
            marks.append(("transform", time.perf_counter()))
            feature = freq.adapter_project(cube, adapter).astype(np.float32)
            marks.append(("adapter", time.perf_counter()))
            tokens = enc.encoder_forward(feature, params, enc_cfg)
            marks.append(("encoder", time.perf_counter()))
            for (_, t0), (name, t1) in zip(marks, marks[1:]):
                stage_times.setdefault(name, []).append(1e3 * (t1 - t0))
        medians = {name: round(statistics.median(v), 3) for name, v in stage_times.items()}
        results[mode] = {
            "stages_ms": medians,
            "total_ms": round(sum(medians.values()), 3),
            "tokens": tokens.count,
            "token_dim": tokens.dim,
        }
    payload = {
        "canvas_side": cfg.canvas_side,
        "repeats": args.repeats,
        "modes": results,
        "token_budget": {
            "dct": enc.token_count(cfg.canvas_side, "dct"),
            "rgb": enc.token_count(cfg.canvas_side, "rgb"),
        },
    }
    if args.out is not None:
        out_dir = _require_out(args)
        _write_json(out_dir / "bench.json", payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _setup_logging() -> None:
    level_name = os.environ.get("FREQDOC_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, FormatError) as exc:
        LOG.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        LOG.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
