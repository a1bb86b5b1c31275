"""Joint training of two encoders, one per modality, mapping into one code space.

Aggregate loss over a batch of typed pairs::

    mean over pairs of  mu1 * L(xi(x), xi(x'))     for XX pairs
                        mu2 * L(eta(y), eta(y'))   for YY pairs
                              L(xi(x), eta(y))     for XY pairs

where ``L`` is the sparse hashing pair loss. ``mu1 = mu2 = 0`` is the
cross-modal regime: intra-modality pairs are skipped outright, so they
contribute exactly nothing.

Gradient contributions are stacked in a canonical order (own row, pair type,
partner row) before one backward pass per encoder, so the reduction order
does not depend on how the batch was shuffled.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, backward, forward, load_checkpoint, save_checkpoint
from .trainer import (
    EpochRecord,
    LossConfig,
    MomentumSGD,
    SgdConfig,
    _EpochStats,
    check_finite,
    iter_batches,
    pair_loss_terms,
)

__all__ = [
    "KINDS",
    "MMTrainResult",
    "MultimodalConfig",
    "MultimodalPair",
    "as_mm_pairs",
    "load_mm_checkpoints",
    "mm_gradient",
    "mm_loss",
    "mm_train",
    "save_mm_checkpoints",
]

KINDS = ("XX", "YY", "XY")


@dataclass
class MultimodalConfig:
    mu1: float = 1.0
    mu2: float = 1.0
    loss_x: LossConfig = field(default_factory=LossConfig)
    loss_y: LossConfig = field(default_factory=LossConfig)
    loss_xy: LossConfig | None = None  # defaults to loss_x
    sgd: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValueError("mu1 and mu2 must be nonnegative")
        if self.loss_xy is None:
            self.loss_xy = self.loss_x

    @property
    def cross_modal(self) -> bool:
        return self.mu1 == 0 and self.mu2 == 0


@dataclass(frozen=True)
class MultimodalPair:
    kind: str
    a: int  # row of X for XX/XY, of Y for YY
    b: int  # row of X for XX, of Y for YY/XY
    s: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.s not in (0, 1):
            raise ValueError("label must be 0 or 1")


def as_mm_pairs(pairs) -> np.ndarray:
    """``(P, 4)`` int array of ``(kind, a, b, s)`` with kind coded 0/1/2."""
    rows = []
    for p in pairs:
        if isinstance(p, MultimodalPair):
            rows.append((KINDS.index(p.kind), p.a, p.b, p.s))
        else:
            k, a, b, s = p
            rows.append((KINDS.index(k) if isinstance(k, str) else int(k), int(a), int(b), int(s)))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if arr.shape[0] == 0:
        raise ValueError("no pairs given")
    if not (np.all(np.isin(arr[:, 0], (0, 1, 2))) and np.all(np.isin(arr[:, 3], (0, 1)))):
        raise ValueError("bad pair kind or label")
    return arr


def _check(X, Y, xi: EncoderParams, eta: EncoderParams, P: np.ndarray):
    if xi.m != eta.m:
        raise ValueError(f"encoders disagree on code length: {xi.m} vs {eta.m}")
    if X.shape[1] != xi.n or Y.shape[1] != eta.n:
        raise ValueError("modality dimension does not match its encoder")
    for kind, (da, db) in enumerate(((X, X), (Y, Y), (X, Y))):
        sel = P[P[:, 0] == kind]
        if sel.size and (sel[:, 1:3].min() < 0 or sel[:, 1].max() >= len(da) or sel[:, 2].max() >= len(db)):
            raise IndexError(f"{KINDS[kind]} pair index out of range")


def _terms(P, X, Y, xi, eta, cfg: MultimodalConfig):
    """Per-pair losses and code gradients, plus the rows each gradient belongs to.

    Returns ``(loss, d1, s, entries, states)`` with ``entries[side]`` a list
    of ``(key, row, grad)`` (side 0 is xi, side 1 is eta) and ``states`` the
    pre-quantization code states of each encoder's distinct rows.
    """
    k = P.shape[0]
    loss = np.zeros(k)
    d1 = np.zeros(k)
    entries = ([], [])
    live = [
        (0, cfg.mu1, cfg.loss_x, 0, 0),
        (1, cfg.mu2, cfg.loss_y, 1, 1),
        (2, 1.0, cfg.loss_xy, 0, 1),
    ]
    live = [spec for spec in live if spec[1] != 0 and np.any(P[:, 0] == spec[0])]
    # one forward pass per encoder over its sorted distinct rows
    need = ([], [])
    for kind, _, _, sa, sb in live:
        sel = P[:, 0] == kind
        need[sa].append(P[sel, 1])
        need[sb].append(P[sel, 2])
    rows, codes, states = [], [], []
    for side, (params, data) in enumerate(((xi, X), (eta, Y))):
        r = np.unique(np.concatenate(need[side])) if need[side] else np.empty(0, dtype=np.int64)
        t = forward(params, data[r]) if r.size else None
        rows.append(r)
        codes.append(t.y if t is not None else None)
        if t is not None:
            states.append(t.code_state)
    for kind, weight, lcfg, sa, sb in live:
        sel = np.flatnonzero(P[:, 0] == kind)
        a, b, s = P[sel, 1], P[sel, 2], P[sel, 3]
        ya = codes[sa][np.searchsorted(rows[sa], a)]
        yb = codes[sb][np.searchsorted(rows[sb], b)]
        l, g1, g2, dd = pair_loss_terms(ya, yb, s, lcfg)
        loss[sel] = weight * l
        d1[sel] = dd
        cross = int(kind == 2)
        for j in range(sel.size):
            entries[sa].append(((int(a[j]), cross, int(b[j]), int(s[j])), int(a[j]), weight * g1[j] / k))
            entries[sb].append(((int(b[j]), cross, int(a[j]), int(s[j])), int(b[j]), weight * g2[j] / k))
    return loss, d1, P[:, 3], entries, states


def _accumulate(params: EncoderParams, data: np.ndarray, items) -> dict[str, np.ndarray]:
    if not items:
        return {k: np.zeros_like(v) for k, v in params.arrays().items()}
    items = sorted(items, key=lambda e: e[0])
    rows = np.array([r for _, r, _ in items])
    g = np.stack([gy for _, _, gy in items])
    trace = forward(params, data[rows])
    return backward(params, trace, g, train_tau=True)


def mm_gradient(batch, X, Y, xi: EncoderParams, eta: EncoderParams, cfg: MultimodalConfig):
    """``(mean loss, grads for xi, grads for eta)`` of one batch."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    P = as_mm_pairs(batch)
    _check(X, Y, xi, eta, P)
    loss, _, _, entries, _ = _terms(P, X, Y, xi, eta, cfg)
    return float(loss.mean()), _accumulate(xi, X, entries[0]), _accumulate(eta, Y, entries[1])


def mm_loss(batch, X, Y, xi: EncoderParams, eta: EncoderParams, cfg: MultimodalConfig) -> float:
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    P = as_mm_pairs(batch)
    _check(X, Y, xi, eta, P)
    return float(_terms(P, X, Y, xi, eta, cfg)[0].mean())


@dataclass
class MMTrainResult:
    xi: EncoderParams
    eta: EncoderParams
    log: list[EpochRecord] = field(default_factory=list)


def mm_train(X, Y, pairs, cfg: MultimodalConfig, xi_init: EncoderParams, eta_init: EncoderParams, *, on_epoch=None):
    """Momentum SGD on both encoders; ``on_epoch(epoch, xi, eta)`` runs after each epoch.

    The log's distance columns cover every pair kind that contributes.
    """
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    P = as_mm_pairs(pairs)
    xi, eta = xi_init.copy(), eta_init.copy()
    _check(X, Y, xi, eta, P)
    sgd = cfg.sgd
    names = ("W", "S", "tau")
    opt_x = MomentumSGD({k: getattr(xi, k) for k in names}, sgd.momentum)
    opt_y = MomentumSGD({k: getattr(eta, k) for k in names}, sgd.momentum)
    rng = np.random.default_rng(sgd.seed)
    result = MMTrainResult(xi=xi, eta=eta)
    for epoch in range(sgd.max_epochs):
        lr = sgd.lr_at(epoch)
        stats = _EpochStats()
        for bi, idx in enumerate(iter_batches(P.shape[0], sgd, rng)):
            batch = P[idx]
            loss, d1, s, entries, states = _terms(batch, X, Y, xi, eta, cfg)
            gx = _accumulate(xi, X, entries[0])
            gy = _accumulate(eta, Y, entries[1])
            check_finite(float(loss.mean()), {**{"xi." + k: gx[k] for k in names}, **{"eta." + k: gy[k] for k in names}}, epoch, bi)
            opt_x.step(gx, lr)
            opt_y.step(gy, lr)
            for p in (xi, eta):
                np.maximum(p.tau, 0.0, out=p.tau)
            live = (batch[:, 0] == 2) | ((batch[:, 0] == 0) & (cfg.mu1 > 0)) | ((batch[:, 0] == 1) & (cfg.mu2 > 0))
            stats.add(loss, d1[live], s[live], *states)
        result.log.append(stats.record(epoch, lr))
        if on_epoch is not None:
            on_epoch(epoch, xi, eta)
    return result


def save_mm_checkpoints(out_dir, xi: EncoderParams, eta: EncoderParams, *, names=("x", "y"), config: dict | None = None):
    """Two encoder checkpoints plus ``manifest.json`` tying them together."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_json = json.dumps(config or {}, sort_keys=True)
    manifest = {
        "modalities": list(names),
        "checkpoints": [f"{n}.ckpt" for n in names],
        "m": xi.m,
        "config_hash": hashlib.sha256(cfg_json.encode()).hexdigest()[:16],
    }
    for name, params in zip(names, (xi, eta)):
        save_checkpoint(out / f"{name}.ckpt", params, method="mm", meta={"modality": name})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "manifest.json"


def load_mm_checkpoints(manifest_path) -> tuple[EncoderParams, EncoderParams, dict]:
    path = Path(manifest_path)
    manifest = json.loads(path.read_text())
    xi, _ = load_checkpoint(path.parent / manifest["checkpoints"][0])
    eta, _ = load_checkpoint(path.parent / manifest["checkpoints"][1])
    if xi.m != eta.m or xi.m != manifest["m"]:
        raise ValueError(f"{path}: checkpoints disagree on code length")
    return xi, eta, manifest


def config_dict(cfg: MultimodalConfig) -> dict:
    return asdict(cfg)
