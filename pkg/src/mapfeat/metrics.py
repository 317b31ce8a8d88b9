"""Feature-level matching of ground-truth and generated maps, and detection scores."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .color import Palette
from .polygon import FeaturePolygon, iou_matrix, polygonize
from .raster import RasterTile, extract_mask
from .tileio import Corpus, pair_keys

DEFAULT_IOU_THRESHOLD = 0.3
REPORT_SCHEMA_VERSION = 1


class Kind(str, Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"


@dataclass(frozen=True)
class MatchRecord:
    gt_id: int | None
    det_id: int | None
    iou: float
    kind: Kind


@dataclass(frozen=True)
class TileCounts:
    key: str
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class Scores:
    """Precision, recall and F1; ``None`` marks a zero denominator."""

    precision: float | None
    recall: float | None
    f1: float | None

    @property
    def precision_defined(self) -> bool:
        return self.precision is not None

    @property
    def recall_defined(self) -> bool:
        return self.recall is not None


def f1_score(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def scores_from_counts(tp: int, fp: int, fn: int) -> Scores:
    p = tp / (tp + fp) if tp + fp > 0 else None
    r = tp / (tp + fn) if tp + fn > 0 else None
    return Scores(p, r, f1_score(p, r))


def match_tile(gt: list[FeaturePolygon], det: list[FeaturePolygon], threshold: float = DEFAULT_IOU_THRESHOLD):
    """One-to-one greedy matching by descending IoU.

    Pairs with IoU >= threshold are taken best-first (ties by gt id, then det id);
    leftover ground truth becomes FN and leftover detections FP.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"IoU threshold must be in (0, 1], got {threshold}")
    ious = iou_matrix(gt, det)
    gi, dj = np.nonzero(ious >= threshold)
    cand = sorted(zip(-ious[gi, dj], [gt[i].id for i in gi], [det[j].id for j in dj], gi, dj))
    used_g, used_d = set(), set()
    records = []
    for neg_iou, _, _, i, j in cand:
        if i in used_g or j in used_d:
            continue
        used_g.add(i)
        used_d.add(j)
        records.append(MatchRecord(gt[i].id, det[j].id, float(-neg_iou), Kind.TP))
    for i, p in enumerate(gt):
        if i not in used_g:
            best = float(ious[i].max()) if det else 0.0
            records.append(MatchRecord(p.id, None, best, Kind.FN))
    for j, p in enumerate(det):
        if j not in used_d:
            best = float(ious[:, j].max()) if gt else 0.0
            records.append(MatchRecord(None, p.id, best, Kind.FP))
    return records


def count_records(records) -> tuple[int, int, int]:
    tp = sum(r.kind is Kind.TP for r in records)
    fp = sum(r.kind is Kind.FP for r in records)
    fn = sum(r.kind is Kind.FN for r in records)
    return tp, fp, fn


@dataclass
class MatchReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    class_name: str = "house"
    threshold: float = DEFAULT_IOU_THRESHOLD
    name: str = ""
    per_tile: list[TileCounts] = field(default_factory=list)
    records: dict[str, list[MatchRecord]] = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    missing_det: list[str] = field(default_factory=list)
    missing_gt: list[str] = field(default_factory=list)

    @property
    def scores(self) -> Scores:
        return Scores(self.precision, self.recall, self.f1)

    @property
    def ok(self) -> bool:
        return not (self.errors or self.missing_det or self.missing_gt)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "name": self.name,
            "class": self.class_name,
            "iou_threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_defined": self.precision is not None,
            "recall_defined": self.recall is not None,
            "f1_defined": self.f1 is not None,
            "per_tile": [asdict(t) for t in self.per_tile],
            "records": {
                k: [{"gt_id": r.gt_id, "det_id": r.det_id, "iou": r.iou, "kind": r.kind.value} for r in recs]
                for k, recs in self.records.items()
            },
            "errors": self.errors,
            "missing_det": self.missing_det,
            "missing_gt": self.missing_gt,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


CSV_COLUMNS = ["city", "class", "tp", "fp", "fn", "precision", "recall", "f1"]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    fmt = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
    for r in reports:
        w.writerow([r.name, r.class_name, r.tp, r.fp, r.fn, fmt(r.precision), fmt(r.recall), fmt(r.f1)])
    return buf.getvalue()


def aggregate(tile_records, class_name: str = "house", threshold: float = DEFAULT_IOU_THRESHOLD, name: str = "") -> MatchReport:
    """Sum per-tile TP/FP/FN over ``(key, records)`` pairs and score the totals."""
    report = MatchReport(class_name=class_name, threshold=threshold, name=name)
    for key, records in tile_records:
        tp, fp, fn = count_records(records)
        report.per_tile.append(TileCounts(key, tp, fp, fn))
        report.records[key] = list(records)
        report.tp += tp
        report.fp += fp
        report.fn += fn
    s = scores_from_counts(report.tp, report.fp, report.fn)
    report.precision, report.recall, report.f1 = s.precision, s.recall, s.f1
    return report


def tile_polygons(tile: RasterTile, palette: Palette, class_name: str, connectivity: int = 8, min_area_px: int = 4):
    return polygonize(extract_mask(tile, palette[class_name]), connectivity, min_area_px)


def evaluate_corpus(
    gt: Corpus,
    det: Corpus,
    palette: Palette,
    threshold: float = DEFAULT_IOU_THRESHOLD,
    class_name: str = "house",
    connectivity: int = 8,
    min_area_px: int = 4,
    threads: int = 1,
) -> MatchReport:
    """extract_mask -> polygonize -> match_tile per paired key, then aggregate.

    Unpaired keys and size mismatches are listed in the report; the remaining
    pairs are still evaluated.
    """
    shared, only_gt, only_det = pair_keys(gt, det)
    errors = []

    def one(key):
        g, d = gt[key], det[key]
        if g.pixels.shape[:2] != d.pixels.shape[:2]:
            return key, None, {"key": key, "error": "dimension_mismatch",
                               "gt_shape": list(g.pixels.shape), "det_shape": list(d.pixels.shape)}
        gp = tile_polygons(g, palette, class_name, connectivity, min_area_px)
        dp = tile_polygons(d, palette, class_name, connectivity, min_area_px)
        return key, match_tile(gp, dp, threshold), None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, shared))
    else:
        results = [one(k) for k in shared]
    good = []
    for key, recs, err in results:
        if err is not None:
            errors.append(err)
        else:
            good.append((key, recs))
    report = aggregate(good, class_name, threshold, name=gt.name)
    report.errors = errors
    report.missing_det = only_gt
    report.missing_gt = only_det
    return report
