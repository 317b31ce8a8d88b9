"""Command-line entry point: ``mapfeat <subcommand> ...``.

Settings resolve as command-line flag, then ``--config`` JSON file, then built-in
default. Failures print a JSON object ``{"error": ..., "message": ..., "details": ...}``
on stderr and exit non-zero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import dpsgd, fwloss, synth
from .augment import REFERENCE_DENSITY, AugmentError, augment_corpus, house_density
from .color import DEFAULT_PALETTE, Palette
from .metrics import DEFAULT_IOU_THRESHOLD, evaluate_corpus, reports_to_csv
from .polygon import polygonize, to_geojson
from .raster import RasterError, extract_mask, tile_entropy
from .tileio import CorpusError, read_tile, read_tile_dir, resolve_map_dir, write_tile_dir


class CliError(Exception):
    def __init__(self, kind: str, message: str, details=None, code: int = 1):
        super().__init__(message)
        self.kind, self.details, self.code = kind, details, code


@dataclass
class ToolConfig:
    palette: str | None = None
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    entropy_threshold: float = 4.0
    ground_resolution_m: float | None = None  # None: per-tile sidecar value (1.0 if absent)
    reference_density: float = REFERENCE_DENSITY
    seed: int = 0
    threads: int = 1
    connectivity: int = 8
    min_area_px: int = 4

    def validate(self):
        if not 0 < self.iou_threshold <= 1:
            raise CliError("invalid_config", "iou_threshold must be in (0, 1]", code=2)
        if self.entropy_threshold < 0:
            raise CliError("invalid_config", "entropy_threshold must be >= 0", code=2)
        if self.ground_resolution_m is not None and self.ground_resolution_m <= 0:
            raise CliError("invalid_config", "ground_resolution_m must be > 0", code=2)
        if self.reference_density <= 0:
            raise CliError("invalid_config", "reference_density must be > 0", code=2)
        if self.connectivity not in (4, 8):
            raise CliError("invalid_config", "connectivity must be 4 or 8", code=2)
        if self.threads < 1:
            raise CliError("invalid_config", "threads must be >= 1", code=2)


_FLAG_FOR = {
    "palette": "palette",
    "iou_threshold": "iou_threshold",
    "entropy_threshold": "threshold",
    "ground_resolution_m": "ground_resolution",
    "reference_density": "reference_density",
    "seed": "seed",
    "threads": "threads",
    "connectivity": "connectivity",
    "min_area_px": "min_area",
}


def resolve_config(args) -> ToolConfig:
    cfg = ToolConfig()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("malformed_config", f"cannot read config {args.config}: {exc}", code=2)
        known = {f.name for f in fields(ToolConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CliError("malformed_config", "unknown config keys", unknown, code=2)
        for k, v in data.items():
            setattr(cfg, k, v)
    for name, flag in _FLAG_FOR.items():
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, name, v)
    cfg.validate()
    return cfg


def load_palette(cfg: ToolConfig) -> Palette:
    if not cfg.palette:
        return DEFAULT_PALETTE
    try:
        return Palette.load(cfg.palette)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise CliError("malformed_palette", f"cannot load palette {cfg.palette}: {exc}", code=2)


def _write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _read_dir(path, **kw):
    try:
        return read_tile_dir(resolve_map_dir(path), **kw)
    except CorpusError as exc:
        raise CliError("missing_input", str(exc), code=2)


# ---------------------------------------------------------------- subcommands


def cmd_synth(args, cfg):
    kw = dict(size=(args.size, args.size), label_dropout=args.dropout, jitter=args.jitter, cell=args.cell)
    houses = args.houses_per_tile
    if args.house_density is not None:
        area = args.tiles * args.size**2 * (cfg.ground_resolution_m or 1.0) ** 2 / 1e6
        houses = synth.split_counts(int(round(args.house_density * area)), args.tiles)
    manifest = synth.make_corpus(args.tiles, args.out, cfg.seed, load_palette(cfg),
                                 cfg.ground_resolution_m or 1.0, houses, **kw)
    return {"tiles": len(manifest.tiles), "out": str(args.out)}


def cmd_mask(args, cfg):
    palette = load_palette(cfg)
    tile = read_tile(args.input)
    mask = extract_mask(tile, palette[args.class_name])
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(args.out)
    result = {"class": args.class_name, "ones": mask.count, "out": str(args.out)}
    if args.geojson:
        polys = polygonize(mask, cfg.connectivity, cfg.min_area_px)
        _write_json(args.geojson, to_geojson(polys, tile.geo))
        result["polygons"] = len(polys)
    return result


def cmd_filter(args, cfg):
    corpus = _read_dir(args.input)
    entropies = {k: tile_entropy(corpus[k]) for k in corpus.keys()}
    kept = [k for k in corpus.keys() if entropies[k] >= cfg.entropy_threshold]
    dropped = [k for k in corpus.keys() if entropies[k] < cfg.entropy_threshold]
    payload = {"threshold": cfg.entropy_threshold, "kept": kept, "dropped": dropped, "entropy": entropies}
    if args.out:
        _write_json(args.out, payload)
    return {"kept": len(kept), "dropped": len(dropped)}


def cmd_eval(args, cfg):
    palette = load_palette(cfg)
    gt = _read_dir(args.gt)
    det = _read_dir(args.det)
    reports = [
        evaluate_corpus(gt, det, palette, cfg.iou_threshold, name, cfg.connectivity, cfg.min_area_px, cfg.threads)
        for name in args.classes
    ]
    payload = {"reports": [r.to_dict() for r in reports]}
    _write_json(args.out, payload)
    if args.csv:
        Path(args.csv).write_text(reports_to_csv(reports))
    bad = [r for r in reports if not r.ok]
    if bad:
        r = bad[0]
        raise CliError("pair_errors", "some tile pairs could not be evaluated",
                       {"errors": r.errors, "missing_det": r.missing_det, "missing_gt": r.missing_gt})
    return {r.class_name: {"tp": r.tp, "fp": r.fp, "fn": r.fn, "precision": r.precision,
                           "recall": r.recall, "f1": r.f1} for r in reports}


def cmd_augment(args, cfg):
    palette = load_palette(cfg)
    train = _read_dir(args.train)
    generated = _read_dir(args.generated)
    classes = ["house"] + ([n for n in palette.names if n != "house"] if args.include_roads else [])
    try:
        res = augment_corpus(train, generated, palette, cfg.iou_threshold, classes, cfg.ground_resolution_m,
                             cfg.reference_density, cfg.connectivity, cfg.min_area_px)
    except AugmentError as exc:
        raise CliError("augment_refused", str(exc))
    write_tile_dir(args.out, res.corpus)
    if args.report:
        _write_json(args.report, res.to_dict())
    if res.unpaired:
        raise CliError("unpaired_keys", "training and generated corpora are not fully paired", res.unpaired)
    return res.to_dict()


def cmd_density(args, cfg):
    try:
        rep = house_density(_read_dir(args.maps), load_palette(cfg), cfg.ground_resolution_m,
                            cfg.reference_density, connectivity=cfg.connectivity, min_area_px=cfg.min_area_px)
    except AugmentError as exc:
        raise CliError("empty_corpus", str(exc))
    if args.out:
        _write_json(args.out, rep.to_dict())
    return rep.to_dict()


def cmd_loss_check(args, cfg):
    palette = load_palette(cfg)
    image = read_tile(args.image)
    y = read_tile(args.map)
    if image.pixels.shape[:2] != y.pixels.shape[:2]:
        raise CliError("dimension_mismatch", "image and map differ in size",
                       {"image": list(image.pixels.shape), "map": list(y.pixels.shape)})
    x = image.pixels[:, :, :3].astype(np.float64) / 255.0
    rng = np.random.default_rng(cfg.seed)
    g_y = fwloss.AffinePixel(rng.uniform(0.8, 1.2, 3), rng.uniform(-0.05, 0.05, 3))
    g_x = fwloss.AffinePixel(rng.uniform(0.8, 1.2, 3), rng.uniform(-0.05, 0.05, 3))
    res = fwloss.cycle_fw_loss(x, y, g_y, g_x, palette, args.class_name)
    err = fd_gradient_error(x, res, g_x, args.probes, rng)
    return {"loss": res.loss, "mask_pixels": res.mask.count, "max_fd_rel_error": err}


def fd_gradient_error(x, res, g_x, probes, rng, h=1e-6):
    """Max relative error of the chained gradient against central differences at random pixels."""
    worst = 0.0
    idx = np.argwhere(res.mask.bits)
    if idx.size == 0:
        return 0.0
    for k in rng.choice(len(idx), size=min(probes, len(idx)), replace=False):
        i, j = idx[k]
        for c in range(x.shape[2]):
            yp, ym = res.y_hat.copy(), res.y_hat.copy()
            yp[i, j, c] += h
            ym[i, j, c] -= h
            fd = (fwloss.fw_loss(x, g_x(yp), res.mask) - fwloss.fw_loss(x, g_x(ym), res.mask)) / (2 * h)
            an = res.grad_y_hat[i, j, c]
            worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return float(worst)


OBJECTIVES = {
    "least-squares": lambda seed: dpsgd.LeastSquares.random(seed=seed),
    "logistic": lambda seed: dpsgd.Logistic.random(seed=seed),
}


def cmd_dpsgd(args, cfg):
    obj = OBJECTIVES[args.objective](cfg.seed)
    tc = dpsgd.TrainConfig(args.workers, args.lr, args.batch, args.steps, cfg.seed, args.averaging, args.lr_decay)
    try:
        trace = dpsgd.run_training(obj, tc)
    except dpsgd.DivergenceError as exc:
        raise CliError("diverged", str(exc))
    trace.write_csv(args.out)
    return {"final_mean_loss": trace.mean_loss[-1] if trace.mean_loss else None,
            "final_consensus_distance": trace.consensus[-1] if trace.consensus else None,
            "averaging_events": trace.averaging_events}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, {"usage": self.format_usage().strip()}, code=2)


ERRORS_HELP = """error kinds (JSON on stderr):
  usage             unknown or invalid flags
  malformed_config  unreadable config file or unknown keys
  malformed_palette unreadable palette file
  invalid_config    a threshold outside its valid range
  missing_input     input directory or file does not exist
  pair_errors       eval: unpaired keys or tile size mismatches (report still written)
  unpaired_keys     augment: keys present in only one corpus
  augment_refused   augment: the training corpus is marked as a test split
  dimension_mismatch, diverged, io_error, invalid_input
"""


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mapfeat", description="Map feature extraction, evaluation and training-scheme tools.",
                epilog=ERRORS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, palette=True):
        sp.add_argument("--config", help="JSON config file (flags override it)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="worker threads for per-tile work (1 = serial)")
        if palette:
            sp.add_argument("--palette", help="palette JSON (default: built-in OSM-like palette)")
            sp.add_argument("--connectivity", type=int, choices=(4, 8))
            sp.add_argument("--min-area", type=int, dest="min_area", help="minimum polygon area in pixels")
        sp.epilog = ERRORS_HELP
        sp.formatter_class = argparse.RawDescriptionHelpFormatter

    s = sub.add_parser("synth", help="write a synthetic paired corpus")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--tiles", type=int, default=1)
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--cell", type=int, default=16)
    s.add_argument("--houses-per-tile", type=int, default=100)
    s.add_argument("--house-density", type=float, help="houses per km2 (overrides --houses-per-tile)")
    s.add_argument("--ground-resolution", type=float)
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--jitter", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mask", help="extract a feature mask from a map tile")
    common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--class", dest="class_name", default="house")
    s.add_argument("--out", required=True, help="mask PNG")
    s.add_argument("--geojson", help="also write polygons as GeoJSON")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("filter", help="entropy-filter a tile directory")
    common(s, palette=False)
    s.add_argument("--input", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("eval", help="feature-level precision/recall/F1")
    common(s)
    s.add_argument("--gt", required=True)
    s.add_argument("--det", required=True)
    s.add_argument("--iou-threshold", type=float, dest="iou_threshold")
    s.add_argument("--classes", nargs="+", default=["house"])
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("augment", help="merge false-positive houses into training labels")
    common(s)
    s.add_argument("--train", required=True)
    s.add_argument("--generated", required=True)
    s.add_argument("--iou-threshold", type=float, dest="iou_threshold")
    s.add_argument("--ground-resolution", type=float)
    s.add_argument("--reference-density", type=float)
    s.add_argument("--include-roads", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("density", help="house density and completeness score")
    common(s)
    s.add_argument("--maps", required=True)
    s.add_argument("--ground-resolution", type=float)
    s.add_argument("--reference-density", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("loss-check", help="feature-weighted cycle loss with toy generators")
    common(s)
    s.add_argument("--image", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--class", dest="class_name", default="house")
    s.add_argument("--probes", type=int, default=20)
    s.set_defaults(func=cmd_loss_check)

    s = sub.add_parser("dpsgd-sim", help="simulate decentralized parallel SGD")
    common(s, palette=False)
    s.add_argument("--workers", type=int, default=16)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--lr-decay", type=float, default=1.0)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--objective", choices=sorted(OBJECTIVES), default="least-squares")
    s.add_argument("--averaging", choices=("random_partner", "ring_neighbor", "none"), default="random_partner")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dpsgd)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        result = args.func(args, cfg)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc), "details": exc.details}), file=sys.stderr)
        return exc.code
    except (RasterError, KeyError, ValueError) as exc:
        print(json.dumps({"error": "invalid_input", "message": str(exc), "details": None}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc), "details": None}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
