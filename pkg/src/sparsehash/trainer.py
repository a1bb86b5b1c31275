"""Siamese training of a single encoder under the sparse hashing loss.

Per pair, with ``d = ||y - y'||_1``::

    L = s * d + (lam / 2) * (1 - s) * max(0, M - d)**2 + alpha * (||y||_1 + ||y'||_1)

``s = 1`` marks similar pairs and ``s = 0`` dissimilar ones. A batch loss is
the arithmetic mean over its pairs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, ForwardTrace, backward, forward

__all__ = [
    "EpochRecord",
    "LossConfig",
    "MomentumSGD",
    "NumericalError",
    "PairSample",
    "SgdConfig",
    "TrainResult",
    "as_pair_array",
    "pair_gradient",
    "pair_loss",
    "pair_loss_terms",
    "pairs_from_labels",
    "read_log",
    "sparse_batch_loss",
    "train",
    "write_log",
]

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Loss or gradient became non-finite during training."""


@dataclass(frozen=True)
class PairSample:
    a: int
    b: int
    s: int

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a pair must reference two distinct items")
        if self.s not in (0, 1):
            raise ValueError("label must be 0 (dissimilar) or 1 (similar)")


@dataclass
class LossConfig:
    alpha: float = 0.01
    lam: float = 1.0
    margin: float = 8.0

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lam must be nonnegative")
        if not self.margin > 0:
            raise ValueError("margin must be positive")


@dataclass
class SgdConfig:
    lr: float = 0.01
    gamma: float = 0.98  # per-epoch geometric learning-rate decay
    momentum: float = 0.9
    max_epochs: int = 250
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.gamma**epoch


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    mean_sparsity: float
    mean_pos_d1: float
    mean_neg_d1: float
    lr: float


@dataclass
class TrainResult:
    params: EncoderParams
    log: list[EpochRecord] = field(default_factory=list)


def as_pair_array(pairs, n_items: int | None = None) -> np.ndarray:
    """Normalize pairs to an ``(P, 3)`` int array of ``(a, b, s)``.

    Labels in {-1, +1} are converted to {0, 1}.
    """
    if len(pairs) and isinstance(pairs[0], PairSample):
        arr = np.array([(p.a, p.b, p.s) for p in pairs], dtype=np.int64)
    else:
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 3).copy()
    if arr.shape[0] == 0:
        raise ValueError("no pairs given")
    if np.any(arr[:, 2] == -1):
        if not np.all(np.isin(arr[:, 2], (-1, 1))):
            raise ValueError("mixed label conventions")
        arr[:, 2] = (arr[:, 2] + 1) // 2
    if not np.all(np.isin(arr[:, 2], (0, 1))):
        raise ValueError("labels must be 0/1 (or -1/+1)")
    if n_items is not None and (arr[:, :2].min() < 0 or arr[:, :2].max() >= n_items):
        raise IndexError("pair index out of range")
    return arr


def pairs_from_labels(labels, n_pos: int, n_neg: int, seed: int = 0) -> np.ndarray:
    """Sample positive (shared label) and negative pairs from class labels."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    eligible = [c for c, idx in by_class.items() if idx.size >= 2]
    if n_pos and not eligible:
        raise ValueError("no class has two members; cannot form positives")
    if n_neg and len(by_class) < 2:
        raise ValueError("need at least two classes to form negatives")
    out = []
    for _ in range(n_pos):
        c = eligible[rng.integers(len(eligible))]
        a, b = rng.choice(by_class[c], size=2, replace=False)
        out.append((a, b, 1))
    n = labels.size
    while len(out) < n_pos + n_neg:
        a, b = rng.integers(n, size=2)
        if labels[a] != labels[b]:
            out.append((a, b, 0))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def pair_loss_terms(y, y2, s, cfg: LossConfig):
    """Per-pair loss and its gradients w.r.t. both codes (vectorized over rows)."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(y2, dtype=np.float64))
    if y.shape != y2.shape:
        raise ValueError(f"code shapes differ: {y.shape} vs {y2.shape}")
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (y.shape[0],))
    diff = y - y2
    d1 = np.abs(diff).sum(axis=1)
    hinge = np.maximum(0.0, cfg.margin - d1)
    loss = s * d1 + 0.5 * cfg.lam * (1 - s) * hinge**2 + cfg.alpha * (np.abs(y).sum(axis=1) + np.abs(y2).sum(axis=1))
    coef = (s - cfg.lam * (1 - s) * hinge)[:, None]
    sd = np.sign(diff)
    g1 = coef * sd + cfg.alpha * np.sign(y)
    g2 = -coef * sd + cfg.alpha * np.sign(y2)
    return loss, g1, g2, d1


def pair_loss(y, y2, s, cfg: LossConfig) -> float:
    """Loss of a single pair (mean over rows when given batches)."""
    loss, *_ = pair_loss_terms(y, y2, s, cfg)
    return float(loss.mean())


def pair_gradient(
    trace: ForwardTrace, trace2: ForwardTrace, s, cfg: LossConfig, params: EncoderParams, *, train_tau: bool = True
) -> dict[str, np.ndarray]:
    """Gradient of the mean pair loss w.r.t. the shared parameters.

    Both siamese branches share weights, so their contributions add up.
    """
    if trace.x.shape[-1] != params.n or len(trace.z) != params.T + 1 or len(trace2.z) != params.T + 1:
        raise RuntimeError("traces were not produced by these parameters")
    _, g1, g2, _ = pair_loss_terms(trace.y, trace2.y, s, cfg)
    k = g1.shape[0]
    ga = backward(params, trace, g1.reshape(trace.y.shape) / k, train_tau=train_tau)
    gb = backward(params, trace2, g2.reshape(trace2.y.shape) / k, train_tau=train_tau)
    return {name: ga[name] + gb[name] for name in ga}


class MomentumSGD:
    """Heavy-ball SGD over a dict of arrays, updated in place."""

    def __init__(self, arrays: dict[str, np.ndarray], momentum: float):
        self.arrays = arrays
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for k, arr in self.arrays.items():
            v = self.velocity[k]
            v *= self.momentum
            v -= lr * grads[k]
            arr += v


def iter_batches(n: int, cfg: SgdConfig, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start : start + cfg.batch_size]


def check_finite(loss: float, grads: dict[str, np.ndarray], epoch: int, batch: int) -> None:
    if np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values()):
        return
    norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
    raise NumericalError(f"non-finite loss/gradient at epoch {epoch}, batch {batch}: loss={loss}, grad norms={norms}")


class _EpochStats:
    def __init__(self):
        self.loss = self.spars = self.pos = self.neg = 0.0
        self.n = self.n_codes = self.n_pos = self.n_neg = 0

    def add(self, loss, d1, s, *states):
        self.loss += float(loss.sum())
        self.n += loss.size
        for z in states:
            self.spars += float(np.count_nonzero(z)) / z.shape[-1]
            self.n_codes += z.shape[0]
        self.pos += float(d1[s == 1].sum())
        self.neg += float(d1[s == 0].sum())
        self.n_pos += int(np.count_nonzero(s == 1))
        self.n_neg += int(np.count_nonzero(s == 0))

    def record(self, epoch, lr) -> EpochRecord:
        return EpochRecord(
            epoch=epoch,
            mean_loss=self.loss / max(self.n, 1),
            mean_sparsity=self.spars / max(self.n_codes, 1),
            mean_pos_d1=self.pos / self.n_pos if self.n_pos else float("nan"),
            mean_neg_d1=self.neg / self.n_neg if self.n_neg else float("nan"),
            lr=lr,
        )


def sparse_batch_loss(cfg: LossConfig):
    """Per-pair losses and batch-mean gradients of the sparse hashing loss."""

    def fn(y, y2, s):
        loss, g1, g2, d1 = pair_loss_terms(y, y2, s, cfg)
        k = loss.size
        return loss, g1 / k, g2 / k, d1

    return fn


def train(
    dataset,
    pairs,
    loss_cfg: LossConfig,
    sgd_cfg: SgdConfig,
    init: EncoderParams,
    *,
    train_tau: bool = True,
    train_S: bool = True,
    train_bias: bool = False,
    batch_loss=None,
) -> TrainResult:
    """Momentum SGD over shuffled pair mini-batches; ``init`` is not modified.

    ``batch_loss(y, y2, s) -> (per_pair_loss, dL/dy, dL/dy2, d1)`` replaces the
    sparse hashing loss when given; its gradients must already carry the batch
    reduction.
    """
    X = np.asarray(dataset, dtype=np.float64)
    P = as_pair_array(pairs, n_items=X.shape[0])
    params = init.copy()
    names = ["W"] + (["S"] if train_S else []) + (["tau"] if train_tau else []) + (["bias"] if train_bias else [])
    opt = MomentumSGD({k: getattr(params, k) for k in names}, sgd_cfg.momentum)
    batch_loss = batch_loss or sparse_batch_loss(loss_cfg)
    flags = dict(train_S=train_S, train_tau=train_tau, train_bias=train_bias)
    rng = np.random.default_rng(sgd_cfg.seed)
    result = TrainResult(params=params)
    for epoch in range(sgd_cfg.max_epochs):
        lr = sgd_cfg.lr_at(epoch)
        stats = _EpochStats()
        for bi, idx in enumerate(iter_batches(P.shape[0], sgd_cfg, rng)):
            a, b, s = P[idx, 0], P[idx, 1], P[idx, 2]
            ta, tb = forward(params, X[a]), forward(params, X[b])
            loss, g1, g2, d1 = batch_loss(ta.y, tb.y, s)
            ga = backward(params, ta, g1, **flags)
            gb = backward(params, tb, g2, **flags)
            grads = {name: ga[name] + gb[name] for name in names}
            check_finite(float(loss.mean()), grads, epoch, bi)
            opt.step(grads, lr)
            np.maximum(params.tau, 0.0, out=params.tau)
            stats.add(loss, d1, s, ta.code_state, tb.code_state)
        rec = stats.record(epoch, lr)
        result.log.append(rec)
        log.debug("epoch %d loss %.5f sparsity %.4f", epoch, rec.mean_loss, rec.mean_sparsity)
    return result


_LOG_FIELDS = ["epoch", "mean_loss", "mean_sparsity", "mean_pos_d1", "mean_neg_d1", "lr"]


def write_log(path, records: list[EpochRecord]) -> Path:
    path = Path(path)
    lines = ["\t".join(_LOG_FIELDS)]
    for rec in records:
        row = asdict(rec)
        lines.append("\t".join(str(row["epoch"]) if k == "epoch" else repr(float(row[k])) for k in _LOG_FIELDS))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_log(path) -> list[EpochRecord]:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].split("\t") != _LOG_FIELDS:
        raise ValueError(f"{path}: not a training log")
    out = []
    for line in rows[1:]:
        parts = line.split("\t")
        out.append(EpochRecord(int(parts[0]), *(float(p) for p in parts[1:])))
    return out
