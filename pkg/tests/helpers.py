"""Shared test utilities: finite differences, kink-free instances, acceptance log."""

from __future__ import annotations

import numpy as np

from sparsehash.baselines import LinearHashParams, linear_forward, nnhash_loss, nnhash_loss_terms
from sparsehash.encoder import EncoderParams, backward, forward
from sparsehash.multimodal import MultimodalConfig, mm_gradient, mm_loss
from sparsehash.trainer import LossConfig, pair_gradient, pair_loss

# (criterion id, passed, detail) lines gathered by the acceptance suite and
# echoed in the terminal summary.
ACCEPTANCE: list[tuple[str, bool, str]] = []

KINK = 1e-4  # minimum distance to any nondifferentiable point
H = 1e-6


def record(cid: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((cid, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")


def numeric_grad(f, arrays: dict[str, np.ndarray], h: float = H) -> dict[str, np.ndarray]:
    """Central differences of ``f()`` w.r.t. every entry of each array (mutated in place, then restored)."""
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def rel_err(a: dict, b: dict) -> float:
    va = np.concatenate([np.ravel(a[k]) for k in sorted(b)])
    vb = np.concatenate([np.ravel(b[k]) for k in sorted(b)])
    scale = max(np.linalg.norm(va), np.linalg.norm(vb))
    return float(np.linalg.norm(va - vb) / scale) if scale > 1e-12 else 0.0


def random_params(rng, n: int, m: int, T: int) -> EncoderParams:
    return EncoderParams(
        W=rng.standard_normal((m, n)),
        S=0.3 * rng.standard_normal((m, m)),
        tau=rng.uniform(0.0, 0.5, m),
        beta=float(rng.uniform(0.5, 2.0)),
        T=T,
    )


def _shrink_kinks(params: EncoderParams, x) -> bool:
    tr = forward(params, x)
    pre = [tr.b] + tr.u
    return any(np.any(np.abs(np.abs(p) - params.tau) < KINK) for p in pre)


def _code_kinks(y, y2, margin) -> bool:
    diff = np.abs(y - y2)
    near_zero = (diff < KINK) & (diff != 0)  # exact zeros stay zero under perturbation
    d1 = np.abs(y - y2).sum(axis=-1)
    return bool(np.any(near_zero) or np.any(np.abs(margin - d1) < KINK))


def sparse_instance(rng):
    """Random pair batch for pair_loss o forward; None when too close to a kink."""
    n, m, T = int(rng.integers(1, 7)), int(rng.integers(1, 9)), int(rng.integers(0, 3))
    params = random_params(rng, n, m, T)
    k = int(rng.integers(1, 4))
    x, x2 = rng.standard_normal((k, n)), rng.standard_normal((k, n))
    s = rng.integers(0, 2, k)
    y, y2 = forward(params, x).y, forward(params, x2).y
    d1 = np.abs(y - y2).sum(axis=1)
    cfg = LossConfig(
        alpha=float(rng.uniform(0, 0.2)),
        lam=float(rng.uniform(0.1, 2.0)),
        margin=float(max(d1.mean() * rng.uniform(0.5, 1.5), 0.1)),
    )
    if _shrink_kinks(params, x) or _shrink_kinks(params, x2) or _code_kinks(y, y2, cfg.margin):
        return None
    return params, x, x2, s, cfg


def sparse_check(inst) -> float:
    params, x, x2, s, cfg = inst
    analytic = pair_gradient(forward(params, x), forward(params, x2), s, cfg, params)
    arrays = {"W": params.W, "S": params.S, "tau": params.tau}
    numeric = numeric_grad(lambda: pair_loss(forward(params, x).y, forward(params, x2).y, s, cfg), arrays)
    return rel_err(analytic, numeric)


def nnhash_instance(rng):
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 9))
    lp = LinearHashParams(P=rng.standard_normal((m, n)), a=rng.standard_normal(m), beta=float(rng.uniform(0.3, 1.5)))
    k = int(rng.integers(2, 6))
    x, x2 = rng.standard_normal((k, n)), rng.standard_normal((k, n))
    s = rng.integers(0, 2, k)
    y, y2 = linear_forward(lp, x), linear_forward(lp, x2)
    d2 = np.linalg.norm(y - y2, axis=1)
    margin = float(max(d2.mean() * rng.uniform(0.5, 1.5), 0.1))
    if np.any(np.abs(d2 - margin) < KINK) or np.any(d2 < KINK):
        return None
    return lp, x, x2, s, margin


def nnhash_check(inst) -> float:
    lp, x, x2, s, margin = inst
    enc = lp.as_encoder()
    ta, tb = forward(enc, x), forward(enc, x2)
    _, g1, g2, _ = nnhash_loss_terms(ta.y, tb.y, s, margin)
    ga = backward(enc, ta, g1, train_S=False, train_tau=False, train_bias=True)
    gb = backward(enc, tb, g2, train_S=False, train_tau=False, train_bias=True)
    analytic = {"P": ga["W"] + gb["W"], "a": ga["bias"] + gb["bias"]}
    numeric = numeric_grad(
        lambda: nnhash_loss(linear_forward(lp, x), linear_forward(lp, x2), s, margin), {"P": lp.P, "a": lp.a}
    )
    return rel_err(analytic, numeric)


def mm_instance(rng):
    nx, ny, m, T = int(rng.integers(1, 7)), int(rng.integers(1, 7)), int(rng.integers(1, 9)), int(rng.integers(0, 3))
    xi, eta = random_params(rng, nx, m, T), random_params(rng, ny, m, T)
    X, Y = rng.standard_normal((4, nx)), rng.standard_normal((4, ny))
    batch = []
    for _ in range(int(rng.integers(1, 6))):
        kind = ("XX", "YY", "XY")[int(rng.integers(3))]
        a, b = rng.choice(4, size=2, replace=False)
        batch.append((kind, int(a), int(b), int(rng.integers(2))))
    lc = LossConfig(alpha=float(rng.uniform(0, 0.2)), lam=float(rng.uniform(0.1, 2.0)), margin=float(rng.uniform(0.5, 3.0)))
    cfg = MultimodalConfig(mu1=float(rng.uniform(0, 2)), mu2=float(rng.uniform(0, 2)), loss_x=lc, loss_y=lc)
    if _shrink_kinks(xi, X) or _shrink_kinks(eta, Y):
        return None
    yx, yy = forward(xi, X).y, forward(eta, Y).y
    for kind, a, b, _ in batch:
        u, v = {"XX": (yx[a], yx[b]), "YY": (yy[a], yy[b]), "XY": (yx[a], yy[b])}[kind]
        if _code_kinks(u, v, lc.margin):
            return None
    return xi, eta, X, Y, batch, cfg


def mm_check(inst) -> float:
    xi, eta, X, Y, batch, cfg = inst
    _, gx, gy = mm_gradient(batch, X, Y, xi, eta, cfg)
    analytic = {f"x.{k}": gx[k] for k in ("W", "S", "tau")} | {f"y.{k}": gy[k] for k in ("W", "S", "tau")}
    arrays = {f"x.{k}": getattr(xi, k) for k in ("W", "S", "tau")} | {f"y.{k}": getattr(eta, k) for k in ("W", "S", "tau")}
    numeric = numeric_grad(lambda: mm_loss(batch, X, Y, xi, eta, cfg), arrays)
    return rel_err(analytic, numeric)


def kink_free(make, rng, count: int):
    """``count`` instances from ``make``, skipping rejected draws."""
    out = []
    while len(out) < count:
        inst = make(rng)
        if inst is not None:
            out.append(inst)
    return out


def spectral_instance(rng, n=6, gaps=None):
    """Rows +-c_j q_j (positives) and +-e_j q_j (negatives) around an origin row.

    The scatter gap is then Q diag((c^2 - e^2) / n) Q^T with known eigenvectors.
    """
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    gaps = np.arange(n, dtype=float) - 2.5 if gaps is None else np.asarray(gaps, dtype=float)
    e2 = 4.0 + np.zeros(n)
    c2 = e2 + gaps
    rows = [np.zeros(n)]
    pairs = []
    for j in range(n):
        for sign in (1, -1):
            rows.append(sign * np.sqrt(c2[j]) * Q[:, j])
            pairs.append((0, len(rows) - 1, 1))
            rows.append(sign * np.sqrt(e2[j]) * Q[:, j])
            pairs.append((0, len(rows) - 1, 0))
    return np.array(rows), np.array(pairs), Q, gaps / n


def max_angle(P, basis):
    """Largest principal angle between row spaces, via sin = ||(I - B B^T) P^T||."""
    resid = P.T - basis @ (basis.T @ P.T)
    return float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))


def symmetric_pairs(rng, lab, n):
    """XX, YY and both XY orientations of ``n`` random labelled pairs."""
    pairs = []
    while len(pairs) < 4 * n:
        a, b = (int(v) for v in rng.integers(len(lab), size=2))
        if a == b:
            continue
        s = int(lab[a] == lab[b])
        pairs += [("XX", a, b, s), ("YY", a, b, s), ("XY", a, b, s), ("XY", b, a, s)]
    return pairs
