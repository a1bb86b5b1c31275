"""Reference linear hashing methods: diff-hash (spectral) and NN-hash (siamese tanh).

Both produce ``xi(x) = sign(P x + a)``. Diff-hash takes the eigenvectors of
the difference-covariance gap with the smallest eigenvalues and fits each
offset by a one-dimensional threshold sweep. NN-hash trains
``tanh(beta (P x + a))`` under a squared hinge, reusing the encoder in its
degenerate configuration (no recurrence, no shrinkage) plus a bias.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, init_params, load_checkpoint, save_checkpoint
from .trainer import LossConfig, SgdConfig, TrainResult, as_pair_array, train

__all__ = [
    "LinearHashParams",
    "diffhash_fit",
    "fit_offsets",
    "linear_codes",
    "linear_forward",
    "load_linear",
    "nnhash_batch_loss",
    "nnhash_loss",
    "nnhash_loss_terms",
    "nnhash_train",
    "pair_scatter",
    "save_linear",
]

log = logging.getLogger(__name__)


class RankError(ValueError):
    """More projections requested than input dimensions."""


@dataclass
class LinearHashParams:
    P: np.ndarray  # (m, n)
    a: np.ndarray  # (m,)
    beta: float = 1.0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.P.ndim != 2 or self.a.shape != (self.P.shape[0],):
            raise ValueError(f"P must be (m, n) and a length m; got {self.P.shape}, {self.a.shape}")
        if not (np.all(np.isfinite(self.P)) and np.all(np.isfinite(self.a))):
            raise ValueError("non-finite hash parameters")

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[1]

    def as_encoder(self) -> EncoderParams:
        """Equivalent encoder: ``T = 0``, zero thresholds, ``W = P``, bias ``a``."""
        m = self.m
        return EncoderParams(W=self.P.copy(), S=np.zeros((m, m)), tau=np.zeros(m), beta=self.beta, T=0, bias=self.a.copy())

    @classmethod
    def from_encoder(cls, params: EncoderParams) -> "LinearHashParams":
        if params.T != 0 or np.any(params.tau != 0):
            raise ValueError("only a T = 0, tau = 0 encoder is a linear hash")
        return cls(P=params.W.copy(), a=params.bias.copy(), beta=params.beta)


def linear_forward(params: LinearHashParams, x) -> np.ndarray:
    """Relaxed codes ``tanh(beta (P x + a))``."""
    x = np.asarray(x, dtype=np.float64)
    return np.tanh(params.beta * (x @ params.P.T + params.a))


def linear_codes(params: LinearHashParams, x) -> np.ndarray:
    """Hard codes ``sign(P x + a)`` as int8 (0 only on exact ties)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x @ params.P.T + params.a).astype(np.int8)


# --- diff-hash --------------------------------------------------------------


def pair_scatter(X, pairs) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Second-moment matrices of ``x - x'`` over positive and negative pairs."""
    X = np.asarray(X, dtype=np.float64)
    P = as_pair_array(pairs, n_items=X.shape[0])
    out = []
    for label in (1, 0):
        sel = P[P[:, 2] == label]
        D = X[sel[:, 0]] - X[sel[:, 1]]
        out.append((D.T @ D / max(len(sel), 1), len(sel)))
    (sp, n_pos), (sn, n_neg) = out
    return sp, sn, n_pos, n_neg


def _regularize(C: np.ndarray, name: str) -> np.ndarray:
    n = C.shape[0]
    if np.linalg.matrix_rank(C) == n:
        return C
    tr = float(np.trace(C))
    eps = 1e-8 * tr / n if tr > 0 else 1e-8
    warnings.warn(f"{name} covariance is rank-deficient; adding {eps:.3g} * I", RuntimeWarning, stacklevel=3)
    return C + eps * np.eye(n)


def fit_offsets(proj_a, proj_b, s) -> np.ndarray:
    """Per-dimension offsets minimizing false positives + false negatives.

    A pair agrees on bit i iff both projections fall on the same side of the
    threshold ``t = -a_i``. Candidates are midpoints of the sorted projected
    values (plus one point beyond each end); ties keep the smallest candidate.
    """
    proj_a, proj_b = np.atleast_2d(proj_a), np.atleast_2d(proj_b)
    s = np.asarray(s)
    lo, hi = np.minimum(proj_a, proj_b), np.maximum(proj_a, proj_b)
    pos, neg = s == 1, s == 0
    n_neg = int(neg.sum())
    out = np.empty(proj_a.shape[1])
    for i in range(proj_a.shape[1]):
        v = np.unique(np.concatenate([proj_a[:, i], proj_b[:, i]]))
        cand = np.concatenate([[v[0] - 1.0], (v[:-1] + v[1:]) / 2, [v[-1] + 1.0]])

        # split(t) = #{pairs with lo <= t < hi}: the bit is +1 iff value > t
        def split(mask):
            l, h = np.sort(lo[mask, i]), np.sort(hi[mask, i])
            return np.searchsorted(l, cand, side="right") - np.searchsorted(h, cand, side="right")

        errors = split(pos) + (n_neg - split(neg))
        out[i] = -cand[int(np.argmin(errors))]
    return out


def diffhash_fit(X, pairs, m: int) -> LinearHashParams:
    """Spectral fit from labeled pairs over the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[1]
    if m > n:
        raise RankError(f"cannot take {m} projections of {n}-dimensional data")
    pairs = as_pair_array(pairs, n_items=X.shape[0])
    sp, sn, n_pos, n_neg = pair_scatter(X, pairs)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("diff-hash needs both positive and negative pairs")
    sp, sn = _regularize(sp, "positive"), _regularize(sn, "negative")
    # ascending eigenvalues; ties resolved by the solver's ordering
    _, vecs = np.linalg.eigh(sp - sn)
    P = vecs[:, :m].T.copy()
    a = fit_offsets(X[pairs[:, 0]] @ P.T, X[pairs[:, 1]] @ P.T, pairs[:, 2])
    return LinearHashParams(P=P, a=a)


# --- NN-hash ------------------------------------------------------------------


def nnhash_loss_terms(y, y2, s, margin: float):
    """Per-pair losses and batch gradients with separate positive/negative means."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(y2, dtype=np.float64))
    if y.shape != y2.shape:
        raise ValueError(f"code shapes differ: {y.shape} vs {y2.shape}")
    s = np.broadcast_to(np.asarray(s), (y.shape[0],))
    diff = y - y2
    d2 = np.linalg.norm(diff, axis=1)
    hinge = np.maximum(0.0, margin - d2)
    pos = s == 1
    loss = np.where(pos, 0.5 * d2**2, 0.5 * hinge**2)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        pull = np.where(d2 > 0, hinge / d2, 0.0)
    coef = np.where(pos, 1.0 / max(n_pos, 1), -pull / max(n_neg, 1))[:, None]
    g1 = coef * diff
    return loss, g1, -g1, d2


def nnhash_loss(y, y2, s, margin: float) -> float:
    """Positive term averaged over positives plus hinge term averaged over negatives."""
    loss, *_ = nnhash_loss_terms(y, y2, s, margin)
    s = np.broadcast_to(np.asarray(s), loss.shape)
    total = 0.0
    for label in (1, 0):
        sel = loss[s == label]
        if sel.size:
            total += float(sel.mean())
    return total


def nnhash_batch_loss(margin: float):
    def fn(y, y2, s):
        loss, g1, g2, _ = nnhash_loss_terms(y, y2, s, margin)
        return loss, g1, g2, np.abs(y - y2).sum(axis=1)

    return fn


def nnhash_train(
    X, pairs, m: int, margin: float, sgd_cfg: SgdConfig, *, beta: float = 1.0, seed: int | None = None
) -> tuple[LinearHashParams, TrainResult]:
    """Train ``tanh(beta (P x + a))``; P starts from normalized training rows."""
    X = np.asarray(X, dtype=np.float64)
    init = init_params(X, m, T=0, beta=beta, seed=sgd_cfg.seed if seed is None else seed)
    init.S[:] = 0.0
    result = train(
        X,
        pairs,
        LossConfig(alpha=0.0, lam=1.0, margin=margin),
        sgd_cfg,
        init,
        train_tau=False,
        train_S=False,
        train_bias=True,
        batch_loss=nnhash_batch_loss(margin),
    )
    return LinearHashParams.from_encoder(result.params), result


# --- persistence --------------------------------------------------------------


def save_linear(path, params: LinearHashParams, method: str, meta: dict | None = None):
    return save_checkpoint(path, params.as_encoder(), method=method, meta=meta)


def load_linear(path) -> tuple[LinearHashParams, str]:
    enc, tag = load_checkpoint(path)
    return LinearHashParams.from_encoder(enc), tag
