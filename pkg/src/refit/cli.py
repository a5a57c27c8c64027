"""Command line batch driver.

Subcommands: superpix, refine, eval, search, overlay. Settings come from
built-in defaults, then an optional INI file (``--config``), then flags.

Exit codes: 0 success, 1 some files failed and were skipped, 2 configuration
error, 3 I/O error, 4 unmatched file stems.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raster_io as rio
from ._grid import boundary_pixels
from .boundary_fit import Conflict, ThresholdPolicy, refine
from .edgemap import build_edge_map
from .errors import DimensionMismatch, InvalidParams, RefitError
from .metrics import evaluate_batch
from .superpixels import (
    MergeParams,
    QuickshiftParams,
    SearchSpace,
    SlicParams,
    grid_search,
    segment,
)

log = logging.getLogger("refit")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_UNMATCHED = 4

IMAGE_SUFFIXES = (".png", ".pgm")
PALETTE = ((255, 0, 0), (0, 255, 0), (0, 128, 255), (255, 255, 0), (255, 0, 255), (0, 255, 255))


class ConfigError(Exception):
    pass


class StemMismatch(Exception):
    pass


@dataclass
class PipelineConfig:
    algo: str = "slic"
    slic: SlicParams = field(default_factory=SlicParams)
    quickshift: QuickshiftParams = field(default_factory=QuickshiftParams)
    merge: MergeParams = field(default_factory=MergeParams)
    threshold: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    border_is_edge: bool = True
    conflict: Conflict = Conflict.ARGMAX
    seed: int = 0
    workers: int = 1
    images: Path | None = None
    cams: Path | None = None
    gts: Path | None = None
    out: Path | None = None
    search: SearchSpace = field(default_factory=SearchSpace)

    def segment(self, image: rio.Raster) -> rio.LabelMap:
        return segment(image, self.algo, self.slic, self.quickshift, self.merge)

    def refine(self, image: rio.Raster, cam: rio.ResponseMap):
        edges = build_edge_map(self.segment(image), self.border_is_edge)
        return refine(cam, edges, self.threshold, self.conflict)


# --- config parsing ---------------------------------------------------------

_ON = {"on", "true", "yes", "1"}
_OFF = {"off", "false", "no", "0"}

_SCHEMA = {
    "pipeline": {"algo": str, "border_is_edge": "flag", "conflict": str, "seed": int,
                 "workers": int},
    "slic": {"k": int, "compactness": float, "iterations": int,
             "enforce_connectivity": "flag", "min_region_frac": float},
    "quickshift": {"kernel_size": float, "max_dist": float, "ratio": float},
    "merge": {"color_threshold": float},
    "threshold": {"mode": str, "value": float},
    "paths": {"images": Path, "cams": Path, "gts": Path, "out": Path},
    "search": {"k": [int], "compactness": [float], "kernel_size": [float],
               "max_dist": [float], "ratio": [float], "color_threshold": [float],
               "sample_size": int},
}


def _flag(text: str) -> bool:
    low = text.strip().lower()
    if low in _ON:
        return True
    if low in _OFF:
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _convert(kind, text: str):
    if kind == "flag":
        return _flag(text)
    if isinstance(kind, list):
        return tuple(kind[0](v.strip()) for v in text.split(",") if v.strip())
    return kind(text.strip())


def _read_ini(path: Path) -> dict[str, dict]:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    out: dict[str, dict] = {}
    for section in parser.sections():
        schema = _SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                out.setdefault(section, {})[key] = _convert(schema[key], text)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return out


def build_config(args: argparse.Namespace) -> PipelineConfig:
    sections = _read_ini(Path(args.config)) if getattr(args, "config", None) else {}

    def pick(section, key, flag=None):
        value = getattr(args, flag, None) if flag else None
        if value is not None:
            return value
        return sections.get(section, {}).get(key)

    def params(cls, section, flags):
        kwargs = {}
        for key, flag in flags.items():
            value = pick(section, key, flag)
            if value is not None:
                kwargs[key] = value
        return cls(**kwargs)

    try:
        cfg = PipelineConfig(
            slic=params(SlicParams, "slic", {"k": "k", "compactness": "compactness",
                                             "iterations": None,
                                             "enforce_connectivity": None,
                                             "min_region_frac": None}),
            quickshift=params(QuickshiftParams, "quickshift",
                              {"kernel_size": "kernel_size", "max_dist": "max_dist",
                               "ratio": "ratio"}),
            merge=params(MergeParams, "merge", {"color_threshold": "merge_threshold"}),
            threshold=params(ThresholdPolicy, "threshold",
                             {"mode": "threshold_mode", "value": "threshold"}),
            search=params(SearchSpace, "search", {key: None for key in _SCHEMA["search"]}),
        )
        for key in ("algo", "conflict", "seed", "workers"):
            value = pick("pipeline", key, key)
            if value is not None:
                setattr(cfg, key, value)
        border = pick("pipeline", "border_is_edge", "border_edge")
        if border is not None:
            cfg.border_is_edge = _flag(border) if isinstance(border, str) else border
        for key in ("images", "cams", "gts", "out"):
            value = pick("paths", key, key)
            if value is not None:
                setattr(cfg, key, Path(value))
        if cfg.algo not in ("slic", "quickshift"):
            raise ConfigError(f"unknown algorithm {cfg.algo!r}")
        cfg.conflict = Conflict(cfg.conflict)
        if cfg.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except (InvalidParams, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# --- shared helpers ---------------------------------------------------------


def _require_dir(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} directory given")
    if not path.is_dir():
        raise ConfigError(f"{what} directory {path} does not exist")
    return path


def _by_stem(directory: Path, suffixes: tuple[str, ...]) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.is_file() and path.suffix.lower() in suffixes:
            if path.stem in found:
                raise ConfigError(f"duplicate stem {path.stem!r} in {directory}")
            found[path.stem] = path
    return found


def _pair(primary: dict[str, Path], other: dict[str, Path], what: str) -> list[str]:
    missing = sorted(set(primary) - set(other))
    extra = sorted(set(other) - set(primary))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"no {what} for: {', '.join(missing)}")
        if extra:
            parts.append(f"{what} without partner: {', '.join(extra)}")
        raise StemMismatch("; ".join(parts))
    return sorted(primary)


def _out_dir(cfg: PipelineConfig) -> Path:
    if cfg.out is None:
        raise ConfigError("no output directory given (--out)")
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise rio.IoFailure(f"cannot create {cfg.out}: {exc}") from exc
    return cfg.out


def _run(jobs, fn, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _guard(fn):
    """Run fn(job), turning refit errors into (None, message) for skip-and-report."""
    def wrapped(job):
        try:
            return fn(job), None
        except RefitError as exc:
            return None, str(exc)
    return wrapped


def _report_failures(results, names) -> int:
    failed = [(name, err) for name, (_, err) in zip(names, results) if err is not None]
    for name, err in failed:
        log.error("%s: skipped: %s", name, err)
    if failed:
        print(f"{len(failed)} of {len(names)} files failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# --- subcommands ------------------------------------------------------------


def cmd_superpix(cfg: PipelineConfig) -> int:
    images = _by_stem(_require_dir(cfg.images, "image"), IMAGE_SUFFIXES)
    if not images:
        raise ConfigError("no input images")
    out = _out_dir(cfg)

    def work(stem):
        labels = cfg.segment(rio.load_image(images[stem]))
        rio.save_label_map(labels, out / f"{stem}.png")
        return labels.distinct()

    stems = sorted(images)
    results = _run(stems, _guard(work), cfg.workers)
    return _report_failures(results, stems)


def cmd_refine(cfg: PipelineConfig) -> int:
    images = _by_stem(_require_dir(cfg.images, "image"), IMAGE_SUFFIXES)
    cams = _by_stem(_require_dir(cfg.cams, "response map"), (".rfm",))
    if not images:
        raise ConfigError("no input images")
    stems = _pair(images, cams, "response map")
    out = _out_dir(cfg)

    def work(stem):
        image = rio.load_image(images[stem])
        cam = rio.load_response_map(cams[stem])
        if image.shape != cam.shape:
            raise DimensionMismatch(f"image {image.shape} vs response map {cam.shape}")
        refined = cfg.refine(image, cam)
        rio.save_mask(refined.foreground(), out / f"{stem}.png")
        if cam.classes > 1:
            rio.save_label_map(refined.combined, out / f"{stem}_classes.png")
        return True

    results = _run(stems, _guard(work), cfg.workers)
    return _report_failures(results, stems)


def cmd_eval(pred_dir: Path, gt_dir: Path, out: Path | None, skip_absent: bool = False,
             workers: int = 1) -> int:
    gts = _by_stem(_require_dir(gt_dir, "ground truth"), (".png",))
    if not gts:
        raise ConfigError("no ground-truth masks")
    preds = _by_stem(_require_dir(pred_dir, "prediction"), (".png",))
    stems = _pair(gts, preds, "prediction")
    loaded = _run(stems, lambda s: (rio.load_mask(preds[s]), rio.load_mask(gts[s])), workers)
    report = evaluate_batch([p for p, _ in loaded], [g for _, g in loaded], stems,
                            n_classes=2, skip_absent=skip_absent)
    out = out or pred_dir
    out.mkdir(parents=True, exist_ok=True)
    rio.atomic_write(out / "report.json", report.to_json().encode())
    rio.atomic_write(out / "report.csv", report.to_csv().encode())
    print(report.summary())
    return EXIT_OK


def cmd_search(cfg: PipelineConfig) -> int:
    images = _by_stem(_require_dir(cfg.images, "image"), IMAGE_SUFFIXES)
    if not images:
        raise ConfigError("no input images")
    stems = sorted(images)
    gts = cams = None
    if cfg.gts is not None and cfg.cams is not None:
        gt_files = _by_stem(_require_dir(cfg.gts, "ground truth"), (".png",))
        cam_files = _by_stem(_require_dir(cfg.cams, "response map"), (".rfm",))
        _pair(images, gt_files, "ground truth")
        _pair(images, cam_files, "response map")
        gts = _run(stems, lambda s: rio.load_mask(gt_files[s]), cfg.workers)
        cams = _run(stems, lambda s: rio.load_response_map(cam_files[s]), cfg.workers)
    out = _out_dir(cfg)
    loaded = _run(stems, lambda s: rio.load_image(images[s]), cfg.workers)
    result = grid_search(
        loaded, cfg.search, cfg.algo, gts, cams,
        policy=cfg.threshold, conflict=cfg.conflict, border_is_edge=cfg.border_is_edge,
        slic_base=cfg.slic, quickshift_base=cfg.quickshift, seed=cfg.seed, workers=cfg.workers,
    )
    rio.atomic_write(out / "search.json", result.to_json().encode())
    print(f"best {result.objective} {result.best_score:.6f} params {result.best}")
    return EXIT_OK


def render_overlay(image: rio.Raster, masks: list[rio.BinaryMask], alpha: float = 0.4) -> np.ndarray:
    """RGB uint8 image with each mask tinted at ``alpha`` and its contour drawn solid."""
    for m in masks:
        if m.shape != image.shape:
            raise DimensionMismatch(f"mask {m.shape} vs image {image.shape}")
    rgb = image.data if image.channels == 3 else np.repeat(image.data, 3, axis=2)
    out = np.clip(rgb, 0.0, 1.0).copy()
    for i, m in enumerate(masks):
        color = np.asarray(PALETTE[i % len(PALETTE)], dtype=np.float64) / 255.0
        inside = m.bits
        out[inside] = (1.0 - alpha) * out[inside] + alpha * color
        contour = inside & boundary_pixels(inside.astype(np.int64))
        out[contour] = color
    return np.rint(out * 255.0).astype(np.uint8)


def cmd_overlay(image_path: Path, mask_paths: list[Path], out: Path, alpha: float) -> int:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("--alpha must lie in [0, 1]")
    image = rio.load_image(image_path)
    masks = [rio.load_mask(p) for p in mask_paths]
    rgb = render_overlay(image, masks, alpha)
    rio.save_image(rio.Raster(rgb / 255.0), out)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with pipeline settings")
    p.add_argument("--algo", choices=("slic", "quickshift"))
    p.add_argument("--k", type=int, help="SLIC superpixel count")
    p.add_argument("--compactness", type=float)
    p.add_argument("--kernel-size", dest="kernel_size", type=float)
    p.add_argument("--max-dist", dest="max_dist", type=float)
    p.add_argument("--ratio", type=float)
    p.add_argument("--merge-threshold", dest="merge_threshold", type=float)
    p.add_argument("--threshold", type=float, help="response binarization cut")
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=("abs", "rel"))
    p.add_argument("--border-edge", dest="border_edge", choices=("on", "off"))
    p.add_argument("--conflict", choices=("argmax", "first"))
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--images", type=Path)
    p.add_argument("--cams", type=Path)
    p.add_argument("--gts", type=Path)
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("superpix", "write one superpixel label map per image"),
        ("refine", "refine response maps against superpixel boundaries"),
        ("search", "grid-search superpixel hyperparameters on a sample"),
    ):
        _pipeline_flags(sub.add_parser(name, help=helptext))

    ev = sub.add_parser("eval", help="score predicted masks against ground truth")
    ev.add_argument("pred_dir", type=Path)
    ev.add_argument("gt_dir", type=Path)
    ev.add_argument("--out", type=Path, help="report directory (default: pred_dir)")
    ev.add_argument("--skip-absent", action="store_true",
                    help="leave classes absent from both masks out of the mIoU mean")
    ev.add_argument("--workers", type=int, default=1)

    ov = sub.add_parser("overlay", help="draw masks over an image")
    ov.add_argument("image", type=Path)
    ov.add_argument("masks", type=Path, nargs="+")
    ov.add_argument("--out", type=Path, required=True)
    ov.add_argument("--alpha", type=float, default=0.4)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("REFIT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval":
            return cmd_eval(args.pred_dir, args.gt_dir, args.out, args.skip_absent,
                            max(1, args.workers))
        if args.command == "overlay":
            return cmd_overlay(args.image, args.masks, args.out, args.alpha)
        cfg = build_config(args)
        return {"superpix": cmd_superpix, "refine": cmd_refine, "search": cmd_search}[
            args.command](cfg)
    except (ConfigError, InvalidParams) as exc:
        print(f"refit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StemMismatch as exc:
        print(f"refit: {exc}", file=sys.stderr)
        return EXIT_UNMATCHED
    except DimensionMismatch as exc:
        print(f"refit: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RefitError, OSError) as exc:
        print(f"refit: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
