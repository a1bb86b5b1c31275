"""Sparse-vs-dense comparison on synthetic clusters.

Trains the sparse encoder (alpha > 0), its dense ablation (alpha = 0), NN-hash
and diff-hash on one split at two code lengths and reports, per method and
length, recall/precision inside Hamming balls, code sparsity and collision
statistics of the database codes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import diffhash_fit, linear_codes, nnhash_train
from .codes import code_stats, quantize, sparsity
from .data import ClusterConfig, make_clusters, split_dataset
from .encoder import forward, init_params
from .evaluation import GroundTruth, pr_at_radius
from .retrieval import build_index, query
from .trainer import LossConfig, SgdConfig, pairs_from_labels, train

__all__ = [
    "ExperimentConfig",
    "MethodResult",
    "alpha_sweep",
    "format_report",
    "prepare",
    "sparse_vs_dense_experiment",
]

log = logging.getLogger(__name__)

METHODS = ("sparsehash", "dense", "nnhash", "diffhash")


@dataclass
class ExperimentConfig:
    data: ClusterConfig = field(default_factory=lambda: ClusterConfig(spread=1.7))
    n_query_per_class: int = 20
    n_train_per_class: int = 150
    n_pos: int = 1500
    neg_ratio: float = 3.0
    lengths: tuple[int, int] = (16, 48)
    alpha: dict = field(default_factory=lambda: {16: 0.055, 48: 0.36})  # sparse model; the dense ablation uses 0
    lam: dict = field(default_factory=lambda: {16: 0.043, 48: 0.011})
    margin: dict = field(default_factory=lambda: {16: 18.0, 48: 71.0})
    T: int = 1
    beta: float = 3.0
    theta: float = 0.0
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(lr=0.01, max_epochs=25))
    nn_margin: float = 4.0
    nn_lr: float = 0.01
    radii: tuple[int, ...] = (0, 1, 2)
    methods: tuple[str, ...] = METHODS
    seed: int = 0

    def __post_init__(self):
        self.lengths = tuple(int(m) for m in self.lengths)
        self.alpha = {int(k): float(v) for k, v in self.alpha.items()}
        self.lam = {int(k): float(v) for k, v in self.lam.items()}
        self.margin = {int(k): float(v) for k, v in self.margin.items()}
        for m in self.lengths:
            if m not in self.alpha or m not in self.lam or m not in self.margin:
                raise ValueError(f"no alpha/lam/margin configured for code length {m}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    def loss_for(self, m: int, alpha: float) -> LossConfig:
        return LossConfig(alpha=alpha, lam=self.lam[m], margin=self.margin[m])


@dataclass
class MethodResult:
    method: str
    m: int
    sparsity: float
    unique_codes: int
    avg_neighbors_r0: float
    recall: dict[int, float]
    precision: dict[int, float]


@dataclass
class Prepared:
    X: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    query: np.ndarray
    db: np.ndarray
    pairs: np.ndarray  # indices into ``train``
    gt: GroundTruth


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Unit-normalized cluster data, split and training pairs; seeds derive from ``cfg.seed``."""
    data_cfg = ClusterConfig(**{**asdict(cfg.data), "seed": cfg.seed})
    X, labels = make_clusters(data_cfg)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    sp = split_dataset(labels, cfg.n_query_per_class, cfg.n_train_per_class, cfg.seed)
    pairs = pairs_from_labels(labels[sp.train], cfg.n_pos, int(round(cfg.n_pos * cfg.neg_ratio)), cfg.seed)
    gt = GroundTruth.from_labels(labels[sp.query], labels[sp.db])
    return Prepared(X, labels, sp.train, sp.query, sp.db, pairs, gt)


def _sgd(cfg: ExperimentConfig, **over) -> SgdConfig:
    return SgdConfig(**{**asdict(cfg.sgd), "seed": cfg.seed, **over})


def _fit_codes(method: str, m: int, cfg: ExperimentConfig, prep: Prepared):
    Xt = prep.X[prep.train]
    if method in ("sparsehash", "dense"):
        alpha = cfg.alpha[m] if method == "sparsehash" else 0.0
        init = init_params(Xt, m, T=cfg.T, beta=cfg.beta, seed=cfg.seed)
        params = train(Xt, prep.pairs, cfg.loss_for(m, alpha), _sgd(cfg), init).params

        def enc(rows):
            return quantize(forward(params, prep.X[rows]).code_state, cfg.theta)

        return enc(prep.query), enc(prep.db), "ternary"
    if method == "nnhash":
        params, _ = nnhash_train(Xt, prep.pairs, m, cfg.nn_margin, _sgd(cfg, lr=cfg.nn_lr), beta=cfg.beta)
    else:
        params = diffhash_fit(Xt, prep.pairs, min(m, Xt.shape[1]))
        if params.m < m:
            log.warning("diff-hash limited to %d projections in %d dimensions", params.m, Xt.shape[1])
            return None
    q, d = linear_codes(params, prep.X[prep.query]), linear_codes(params, prep.X[prep.db])
    return q, d, "binary" if np.all(d != 0) and np.all(q != 0) else "ternary"


def _evaluate(method, m, q_codes, db_codes, alphabet, cfg: ExperimentConfig, gt: GroundTruth) -> MethodResult:
    index = build_index(db_codes, alphabet)
    recall, precision = {}, {}
    for r in cfg.radii:
        res = pr_at_radius([query(index, q, r, "scan") for q in q_codes], gt)
        recall[r], precision[r] = res.recall, res.precision
    stats = code_stats(db_codes, [0])
    return MethodResult(
        method=method,
        m=m,
        sparsity=float(sparsity(db_codes).mean()),
        unique_codes=stats.unique_code_count,
        avg_neighbors_r0=float(stats.avg_neighbors_at_r[0]),
        recall=recall,
        precision=precision,
    )


def sparse_vs_dense_experiment(cfg: ExperimentConfig) -> list[MethodResult]:
    """One row per (method, code length), in ``cfg.methods`` x ``cfg.lengths`` order."""
    prep = prepare(cfg)
    out = []
    for method in cfg.methods:
        for m in cfg.lengths:
            fitted = _fit_codes(method, m, cfg, prep)
            if fitted is None:
                continue
            out.append(_evaluate(method, m, *fitted, cfg, prep.gt))
            log.info("%s m=%d: %s", method, m, out[-1])
    return out


def alpha_sweep(cfg: ExperimentConfig, alphas, m: int) -> list[float]:
    """Mean database code sparsity of the sparse encoder for each alpha."""
    prep = prepare(cfg)
    Xt = prep.X[prep.train]
    out = []
    for alpha in alphas:
        init = init_params(Xt, m, T=cfg.T, beta=cfg.beta, seed=cfg.seed)
        params = train(Xt, prep.pairs, cfg.loss_for(m, alpha), _sgd(cfg), init).params
        out.append(float(sparsity(quantize(forward(params, prep.X[prep.db]).code_state, cfg.theta)).mean()))
    return out


def format_report(results: list[MethodResult]) -> str:
    """Tab-separated table, one row per (method, m)."""
    radii = sorted(results[0].recall) if results else []
    head = ["method", "m", "sparsity", "unique_codes", "avg_neighbors_r0"]
    head += [f"recall_r{r}" for r in radii] + [f"precision_r{r}" for r in radii]
    lines = ["\t".join(head)]
    for res in results:
        row = [res.method, str(res.m), repr(res.sparsity), str(res.unique_codes), repr(res.avg_neighbors_r0)]
        row += [repr(res.recall[r]) for r in radii] + [repr(res.precision[r]) for r in radii]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def report_json(results: list[MethodResult]) -> str:
    return json.dumps([asdict(r) for r in results], indent=2, sort_keys=True) + "\n"
