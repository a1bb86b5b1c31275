"""ISTA-type encoder network.

One shrinkage stage followed by ``T`` recurrent refinements and a steep tanh::

    b    = W x (+ bias)
    z(0) = shrink(b, tau)
    z(t) = shrink(b + S z(t-1), tau)      t = 1..T
    y    = tanh(beta * z(T))

``forward`` keeps every intermediate so ``backward`` can produce exact
subgradients. Rows of a 2-D input are treated as independent samples.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "EncoderParams",
    "ForwardTrace",
    "backward",
    "encode",
    "forward",
    "init_params",
    "largest_eigenvalue",
    "load_checkpoint",
    "save_checkpoint",
    "shrink",
]


class InsufficientDataError(ValueError):
    pass


@dataclass
class EncoderParams:
    W: np.ndarray  # (m, n)
    S: np.ndarray  # (m, m)
    tau: np.ndarray  # (m,)
    beta: float = 3.0
    T: int = 1
    bias: np.ndarray | None = None  # (m,), only used by the linear NN-hash family

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.S = np.asarray(self.S, dtype=np.float64)
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.bias is None:
            self.bias = np.zeros(self.W.shape[0])
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.T = int(self.T)
        self.beta = float(self.beta)
        self.validate()

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def validate(self) -> None:
        m = self.W.shape[0]
        if self.W.ndim != 2 or m < 1:
            raise ValueError(f"W must be a non-empty (m, n) matrix, got {self.W.shape}")
        if self.S.shape != (m, m):
            raise ValueError(f"S must be ({m}, {m}), got {self.S.shape}")
        if self.tau.shape != (m,) or self.bias.shape != (m,):
            raise ValueError("tau and bias must have length m")
        for name in ("W", "S", "tau", "bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(self.tau < 0):
            raise ValueError("tau must be nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.T < 0:
            raise ValueError("T must be >= 0")

    def copy(self) -> "EncoderParams":
        return replace(self, W=self.W.copy(), S=self.S.copy(), tau=self.tau.copy(), bias=self.bias.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "S": self.S, "tau": self.tau, "bias": self.bias}


@dataclass
class ForwardTrace:
    x: np.ndarray
    b: np.ndarray
    u: list[np.ndarray] = field(default_factory=list)  # pre-shrinkage inputs for t = 1..T
    z: list[np.ndarray] = field(default_factory=list)  # z(0)..z(T)
    y: np.ndarray | None = None

    @property
    def code_state(self) -> np.ndarray:
        return self.z[-1]


def shrink(x, tau) -> np.ndarray:
    """Soft threshold ``max(0, |x| - tau) * sign(x)``."""
    x = np.asarray(x, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim and x.shape[-1] != tau.shape[-1]:
        raise ValueError(f"length mismatch: {x.shape[-1]} vs {tau.shape[-1]}")
    if np.any(tau < 0):
        raise ValueError("thresholds must be nonnegative")
    return np.maximum(np.abs(x) - tau, 0.0) * np.sign(x)


def forward(params: EncoderParams, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n:
        raise ValueError(f"input has dimension {x.shape[-1]}, encoder expects {params.n}")
    b = x @ params.W.T + params.bias
    trace = ForwardTrace(x=x, b=b)
    z = shrink(b, params.tau)
    trace.z.append(z)
    for _ in range(params.T):
        u = b + z @ params.S.T
        z = shrink(u, params.tau)
        trace.u.append(u)
        trace.z.append(z)
    trace.y = np.tanh(params.beta * z)
    return trace


def encode(params: EncoderParams, x) -> np.ndarray:
    """Continuous codes in (-1, 1)."""
    return forward(params, x).y


def backward(
    params: EncoderParams,
    trace: ForwardTrace,
    grad_y,
    *,
    train_S: bool = True,
    train_tau: bool = True,
    train_bias: bool = False,
) -> dict[str, np.ndarray]:
    """Backpropagate ``dL/dy`` through a trace.

    Subgradient conventions: the shrinkage derivative is 0 inside the dead
    zone and at its kinks.
    """
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape != trace.y.shape:
        raise RuntimeError("gradient shape does not match the trace")
    if len(trace.z) != params.T + 1:
        raise RuntimeError("trace was produced with a different T")
    x2 = np.atleast_2d(trace.x)
    g_z = np.atleast_2d(grad_y * params.beta * (1.0 - trace.y**2))
    g_b = np.zeros_like(g_z)
    g_S = np.zeros_like(params.S)
    g_tau = np.zeros_like(params.tau)
    for t in range(params.T, 0, -1):
        u = np.atleast_2d(trace.u[t - 1])
        active = np.abs(u) > params.tau
        g_u = np.where(active, g_z, 0.0)
        g_S += g_u.T @ np.atleast_2d(trace.z[t - 1])
        g_tau -= np.sum(g_u * np.sign(u), axis=0)
        g_b += g_u
        g_z = g_u @ params.S
    b = np.atleast_2d(trace.b)
    g0 = np.where(np.abs(b) > params.tau, g_z, 0.0)
    g_tau -= np.sum(g0 * np.sign(b), axis=0)
    g_b += g0
    grads = {
        "W": g_b.T @ x2,
        "S": g_S if train_S else np.zeros_like(params.S),
        "tau": g_tau if train_tau else np.zeros_like(params.tau),
        "bias": g_b.sum(axis=0) if train_bias else np.zeros_like(params.bias),
    }
    return grads


def largest_eigenvalue(A: np.ndarray, *, rtol: float = 1e-6, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ A @ v)
        if abs(new - lam) <= rtol * abs(new):
            return new
        lam = new
    return lam


def init_params(training_vectors, m: int, T: int = 1, beta: float = 3.0, seed: int = 0) -> EncoderParams:
    """W from unit-normalized random training rows, S = I - W W^T / L, tau = 0."""
    X = np.asarray(training_vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("training vectors must form a 2-D array")
    norms = np.linalg.norm(X, axis=1)
    usable = np.flatnonzero(norms > 0)
    if usable.size < m:
        raise InsufficientDataError(f"need at least {m} nonzero training vectors, got {usable.size}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(usable, size=m, replace=False)
    W = X[rows] / norms[rows, None]
    G = W @ W.T
    L = largest_eigenvalue(G, seed=seed)
    S = np.eye(m) - G / L
    return EncoderParams(W=W, S=S, tau=np.zeros(m), beta=beta, T=T)


# --- checkpoint container -------------------------------------------------
#
# header: magic "SPHK", u16 version, 8-byte ASCII method tag, u32 n, u32 m,
# u32 T, f64 beta; then W (m*n), S (m*m), tau (m), bias (m) as row-major
# little-endian float64.

_MAGIC = b"SPHK"
_VERSION = 1
_HEADER = struct.Struct("<4sH8sIIId")


def save_checkpoint(path, params: EncoderParams, *, method: str = "sparse", meta: dict | None = None) -> Path:
    path = Path(path)
    tag = method.encode("ascii")
    if len(tag) > 8:
        raise ValueError("method tag must fit in 8 bytes")
    blob = _HEADER.pack(_MAGIC, _VERSION, tag.ljust(8, b"\0"), params.n, params.m, params.T, params.beta)
    for arr in (params.W, params.S, params.tau, params.bias):
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    path.write_bytes(blob)
    sidecar = {"method": method, "n": params.n, "m": params.m, "T": params.T, "beta": params.beta}
    sidecar.update(meta or {})
    sidecar["sha256"] = hashlib.sha256(blob).hexdigest()
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[EncoderParams, str]:
    """Returns ``(params, method_tag)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, tag, n, m, T, beta = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sizes = [m * n, m * m, m, m]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    parts = np.split(data, np.cumsum(sizes)[:-1])
    params = EncoderParams(
        W=parts[0].reshape(m, n), S=parts[1].reshape(m, m), tau=parts[2], beta=beta, T=T, bias=parts[3]
    )
    return params, tag.rstrip(b"\0").decode("ascii")
