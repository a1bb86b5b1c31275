"""Retrieval metrics: precision/recall/F1 inside a Hamming ball, mAP@R, MP@K, PR curves.

Rankings and retrieved sets are arrays of database ids; relevance comes from
a :class:`GroundTruth`. Means are computed in exact rational arithmetic and
rounded once, so results do not depend on summation order.
"""

from __future__ import annotations

import json
import logging
from fractions import Fraction
from math import lcm
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .retrieval import CodeIndex, distances, query, rank_all

__all__ = [
    "GroundTruth",
    "MetricReport",
    "PRResult",
    "average_precision",
    "evaluate_index",
    "mean_average_precision",
    "mean_precision_at_k",
    "pr_at_radius",
    "pr_curve",
    "write_report",
]

log = logging.getLogger(__name__)


class GroundTruth:
    """Relevance of database items to each query."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=bool)
        if self.matrix.ndim != 2:
            raise ValueError("relevance matrix must be (n_queries, n_db)")

    @classmethod
    def from_labels(cls, query_labels, db_labels) -> "GroundTruth":
        """Relevant iff the label sets intersect.

        Labels are either one integer per item or, for multi-label data, a
        sequence of integers per item.
        """
        ql, dl = list(query_labels), list(db_labels)
        if all(np.ndim(v) == 0 for v in ql) and all(np.ndim(v) == 0 for v in dl):
            return cls(np.asarray(ql)[:, None] == np.asarray(dl)[None, :])
        vocab = sorted({int(c) for v in ql + dl for c in np.atleast_1d(v)})
        pos = {c: i for i, c in enumerate(vocab)}

        def onehot(items):
            out = np.zeros((len(items), len(vocab)), dtype=np.int32)
            for i, v in enumerate(items):
                out[i, [pos[int(c)] for c in np.atleast_1d(v)]] = 1
            return out

        return cls(onehot(ql) @ onehot(dl).T > 0)

    @classmethod
    def from_pairs(cls, pairs, n_queries: int, n_db: int) -> "GroundTruth":
        """Explicit ``(query, db, s)`` triples; unlisted combinations are irrelevant."""
        mat = np.zeros((n_queries, n_db), dtype=bool)
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
        if pairs.size and (pairs[:, 0].max() >= n_queries or pairs[:, 1].max() >= n_db or pairs[:, :2].min() < 0):
            raise IndexError("pair index out of range")
        pos = pairs[pairs[:, 2] > 0]
        mat[pos[:, 0], pos[:, 1]] = True
        return cls(mat)

    @property
    def n_queries(self) -> int:
        return self.matrix.shape[0]

    def row(self, q: int) -> np.ndarray:
        return self.matrix[q]

    def n_relevant(self, q: int) -> int:
        return int(self.matrix[q].sum())


@dataclass
class PRResult:
    precision: float
    recall: float
    f1: float
    retrieved: int
    relevant: int
    relevant_retrieved: int


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p > 0 and r > 0 else 0.0


def pr_at_radius(results, gt: GroundTruth, average: str = "micro") -> PRResult:
    """Precision, recall and F1 of per-query retrieved id sets.

    ``micro`` pools counts over queries; ``macro`` averages per-query rates.
    Queries without any relevant item do not enter the recall denominator.
    """
    if len(results) != gt.n_queries:
        raise ValueError(f"{len(results)} result sets for {gt.n_queries} queries")
    ret = rel = hit = 0
    precs, recs = [], []
    skipped = 0
    for q, ids in enumerate(results):
        ids = np.asarray(ids, dtype=np.int64)
        row = gt.row(q)
        h = int(row[ids].sum()) if ids.size else 0
        n_rel = int(row.sum())
        ret += ids.size
        rel += n_rel
        hit += h
        precs.append(h / ids.size if ids.size else 0.0)
        if n_rel:
            recs.append(h / n_rel)
        else:
            skipped += 1
    if skipped:
        log.info("%d queries have no relevant items; excluded from recall", skipped)
    if average == "micro":
        p = hit / ret if ret else 0.0
        r = hit / rel if rel else 0.0
    elif average == "macro":
        p = float(np.mean(precs)) if precs else 0.0
        r = float(np.mean(recs)) if recs else 0.0
    else:
        raise ValueError("average must be 'micro' or 'macro'")
    return PRResult(p, r, _f1(p, r), ret, rel, hit)


def _rel_prefix(ranking, row: np.ndarray, depth: int) -> np.ndarray:
    """0/1 relevance of the first ``depth`` ranks; missing ranks count as irrelevant."""
    ids = np.asarray(ranking, dtype=np.int64)[:depth]
    out = np.zeros(depth, dtype=np.int64)
    out[: ids.size] = row[ids]
    return out


def _ap_fraction(ranking, row: np.ndarray, R: int, normalize: bool) -> Fraction:
    rel = _rel_prefix(ranking, row, R)
    pos = np.flatnonzero(rel)
    # sum_n hits(n)/n over relevant ranks, on the common denominator lcm(1..R)
    L = lcm(*range(1, R + 1))
    total = Fraction(sum((k + 1) * (L // (int(n) + 1)) for k, n in enumerate(pos)), L)
    if not normalize:
        return total
    denom = min(R, int(row.sum()))
    return total / denom if denom else Fraction(0)


def average_precision(ranking, row: np.ndarray, R: int, normalize: bool = True) -> float:
    """``sum_{n<=R} P(n) rel(n)``, divided by ``min(R, #relevant)`` when normalizing."""
    if R < 1:
        raise ValueError("R must be >= 1")
    return float(_ap_fraction(ranking, row, R, normalize))


def mean_average_precision(rankings, gt: GroundTruth, R: int, normalize: bool = True) -> float:
    if R < 1:
        raise ValueError("R must be >= 1")
    if len(rankings) != gt.n_queries:
        raise ValueError("one ranking per query is required")
    return float(sum(_ap_fraction(rk, gt.row(q), R, normalize) for q, rk in enumerate(rankings)) / len(rankings))


def mean_precision_at_k(rankings, gt: GroundTruth, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(rankings) != gt.n_queries:
        raise ValueError("one ranking per query is required")
    hits = sum(int(_rel_prefix(rk, gt.row(q), K).sum()) for q, rk in enumerate(rankings))
    return hits / (K * len(rankings))


def _distance_histograms(index: CodeIndex, queries, gt: GroundTruth):
    """Per-distance counts of retrieved and relevant-retrieved items, pooled over queries."""
    m = index.m
    n_ret = np.zeros(m + 1, dtype=np.int64)
    n_hit = np.zeros(m + 1, dtype=np.int64)
    for q, code in enumerate(queries):
        d = distances(index, code)
        n_ret += np.bincount(d, minlength=m + 1)
        n_hit += np.bincount(d[gt.row(q)], minlength=m + 1)
    return n_ret, n_hit, int(gt.matrix.sum())


def pr_curve(index: CodeIndex, queries, gt: GroundTruth, r_cap: int) -> list[tuple[float, float]]:
    """Micro PR points for Hamming balls of radius 0..r_cap, in order of growing recall."""
    if not 0 <= r_cap <= index.m:
        raise ValueError(f"r_cap must lie in [0, {index.m}]")
    n_ret, n_hit, n_rel = _distance_histograms(index, queries, gt)
    ret, hit = np.cumsum(n_ret), np.cumsum(n_hit)
    pts = []
    for r in range(r_cap + 1):
        p = hit[r] / ret[r] if ret[r] else 0.0
        rc = hit[r] / n_rel if n_rel else 0.0
        pts.append((float(p), float(rc)))
    return pts


@dataclass
class MetricReport:
    radii: list[int]
    per_radius: dict[int, PRResult]
    R: int
    map_at_R: float
    map_at_R_unnormalized: float
    K: int
    mp_at_K: float
    curves: dict[int, list[tuple[float, float]]] = field(default_factory=dict)


def evaluate_index(
    index: CodeIndex,
    queries,
    gt: GroundTruth,
    *,
    radii=(0, 1, 2),
    R: int = 10,
    K: int = 100,
    curve_caps=(),
    average: str = "micro",
) -> MetricReport:
    per = {int(r): pr_at_radius([query(index, q, int(r), "scan") for q in queries], gt, average) for r in radii}
    depth = min(max(R, K), len(index))
    rankings = [rank_all(index, q, depth) for q in queries]
    return MetricReport(
        radii=[int(r) for r in radii],
        per_radius=per,
        R=R,
        map_at_R=mean_average_precision(rankings, gt, R),
        map_at_R_unnormalized=mean_average_precision(rankings, gt, R, normalize=False),
        K=K,
        mp_at_K=mean_precision_at_k(rankings, gt, K),
        curves={int(c): pr_curve(index, queries, gt, int(c)) for c in curve_caps},
    )


def write_report(out_dir, report: MetricReport) -> Path:
    """``metrics.tsv`` (one row per radius), ``summary.json`` and ``pr_curve_r<cap>.tsv`` files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["radius\tprecision\trecall\tf1\tretrieved\trelevant\trelevant_retrieved"]
    for r in report.radii:
        x = report.per_radius[r]
        lines.append(f"{r}\t{x.precision!r}\t{x.recall!r}\t{x.f1!r}\t{x.retrieved}\t{x.relevant}\t{x.relevant_retrieved}")
    (out / "metrics.tsv").write_text("\n".join(lines) + "\n")
    summary = {
        "per_radius": {str(r): asdict(report.per_radius[r]) for r in report.radii},
        "R": report.R,
        "map_at_R": report.map_at_R,
        "map_at_R_unnormalized": report.map_at_R_unnormalized,
        "K": report.K,
        "mp_at_K": report.mp_at_K,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for cap, pts in report.curves.items():
        body = "".join(f"{p!r}\t{r!r}\n" for p, r in pts)
        (out / f"pr_curve_r{cap}.tsv").write_text("precision\trecall\n" + body)
    return out
