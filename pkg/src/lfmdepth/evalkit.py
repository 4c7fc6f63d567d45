"""Affine-invariant depth evaluation: alignment, AbsRel, delta1 and depth-band breakdown."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .normalize import DepthMap, percentiles

BAND_EDGES = (0.2, 0.4, 0.6)
BAND_NAMES = ("0-20%", "20-40%", "40-60%", ">60%")
MIN_DEPTH = 1e-6


class AlignmentError(ValueError):
    pass


class EmptyIntersectionError(ValueError):
    pass


def _shared(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.values.shape != gt.values.shape:
        raise ValueError(f"shape mismatch {pred.values.shape} vs {gt.values.shape}")
    return pred.valid & gt.valid


def fit_affine(pred: DepthMap, gt: DepthMap) -> tuple[float, float]:
    """Least-squares (scale, shift) minimizing sum (a * pred + b - gt)^2 over shared valid pixels."""
    mask = _shared(pred, gt)
    if mask.sum() < 2:
        raise AlignmentError("need at least two shared valid pixels")
    p = pred.values[mask].astype(np.float64)
    g = gt.values[mask].astype(np.float64)
    pm, gm = p.mean(), g.mean()
    var = np.mean((p - pm) ** 2)
    if var <= 1e-24 * max(1.0, pm * pm):
        raise AlignmentError("prediction is constant over the valid pixels")
    a = float(np.mean((p - pm) * (g - gm)) / var)
    return a, float(gm - a * pm)


def align(pred: DepthMap, gt: DepthMap) -> DepthMap:
    a, b = fit_affine(pred, gt)
    out = np.maximum(a * pred.values.astype(np.float64) + b, MIN_DEPTH)
    return DepthMap(out, pred.valid & gt.valid, units="m")


def _pairs(pred: DepthMap, gt: DepthMap, mask: np.ndarray | None = None):
    m = _shared(pred, gt)
    if mask is not None:
        m = m & mask
    if not m.any():
        raise EmptyIntersectionError("no shared valid pixels")
    return pred.values[m].astype(np.float64), gt.values[m].astype(np.float64)


def absrel(pred: DepthMap, gt: DepthMap) -> float:
    p, g = _pairs(pred, gt)
    return float(np.mean(np.abs(p - g) / g))


def _delta_hits(p: np.ndarray, g: np.ndarray, threshold: float) -> np.ndarray:
    return np.maximum(p / g, g / p) < threshold


def delta1(pred: DepthMap, gt: DepthMap, threshold: float = 1.25) -> float:
    p, g = _pairs(pred, gt)
    return float(np.mean(_delta_hits(p, g, threshold)))


def band_index(gt: DepthMap) -> np.ndarray:
    """Band 0..3 per pixel from the clamped position of gt within [d2, d98]."""
    stats = percentiles(gt)
    pos = np.clip((gt.values.astype(np.float64) - stats.d2) / (stats.d98 - stats.d2), 0.0, 1.0)
    return np.digitize(pos, BAND_EDGES)


def range_breakdown(pred: DepthMap, gt: DepthMap) -> tuple[list[float | None], list[int]]:
    """Per-band delta1 and pixel counts; an empty band reports ``None``."""
    bands = band_index(gt)
    mask = _shared(pred, gt)
    p = pred.values.astype(np.float64)
    g = gt.values.astype(np.float64)
    scores, counts = [], []
    for b in range(len(BAND_NAMES)):
        sel = mask & (bands == b)
        n = int(sel.sum())
        counts.append(n)
        scores.append(float(np.mean(_delta_hits(p[sel], g[sel], 1.25))) if n else None)
    return scores, counts


@dataclass
class MetricReport:
    absrel: float
    delta1: float
    band_delta1: list[float | None]
    band_counts: list[int]
    valid_count: int
    name: str = ""

    def row(self) -> dict:
        out = {"image": self.name, "valid": self.valid_count,
               "absrel": f"{self.absrel:.6f}", "delta1": f"{self.delta1:.6f}"}
        for i, (s, n) in enumerate(zip(self.band_delta1, self.band_counts)):
            out[f"delta1_band{i}"] = "" if s is None else f"{s:.6f}"
            out[f"count_band{i}"] = n
        return out


CSV_COLUMNS = ["image", "valid", "absrel", "delta1"] + \
    [f"delta1_band{i}" for i in range(4)] + [f"count_band{i}" for i in range(4)]


def evaluate(pred: DepthMap, gt: DepthMap, name: str = "") -> MetricReport:
    """Align an affine-invariant prediction to ``gt`` and compute all metrics."""
    aligned = align(pred, gt)
    scores, counts = range_breakdown(aligned, gt)
    return MetricReport(absrel(aligned, gt), delta1(aligned, gt), scores, counts,
                        int(_shared(aligned, gt).sum()), name)


@dataclass
class Aggregate:
    """Image-mean AbsRel/delta1; band delta1 weighted by band pixel count."""

    reports: list[MetricReport] = field(default_factory=list)

    def add(self, rep: MetricReport) -> None:
        self.reports.append(rep)

    def summary(self, name: str = "ALL") -> MetricReport:
        if not self.reports:
            raise ValueError("no reports to aggregate")
        band_scores, band_counts = [], []
        for b in range(len(BAND_NAMES)):
            hits = total = 0.0
            for r in self.reports:
                n = r.band_counts[b]
                if n:
                    hits += r.band_delta1[b] * n
                    total += n
            band_scores.append(hits / total if total else None)
            band_counts.append(int(total))
        return MetricReport(
            float(np.mean([r.absrel for r in self.reports])),
            float(np.mean([r.delta1 for r in self.reports])),
            band_scores, band_counts, int(sum(r.valid_count for r in self.reports)), name)


def metrics_csv(reports: list[MetricReport], aggregate: MetricReport | None = None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    if aggregate is not None:
        writer.writerow(aggregate.row())
    return buf.getvalue()
