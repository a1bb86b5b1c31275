"""Synthetic data and the on-disk formats for features, labels, pairs and codes."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codes import as_codes, pack_codes, packed_nbytes, unpack_codes

__all__ = [
    "ClusterConfig",
    "Split",
    "make_clusters",
    "read_codes",
    "read_features",
    "read_labels",
    "read_mm_pairs",
    "read_pairs",
    "split_dataset",
    "write_codes",
    "write_features",
    "write_labels",
    "write_mm_pairs",
    "write_pairs",
]


class DataError(ValueError):
    """Malformed or unreadable data file."""


@dataclass
class ClusterConfig:
    n_points: int = 2000
    n_clusters: int = 10
    dim: int = 32
    spread: float = 0.8
    center_scale: float = 1.0
    seed: int = 0


def make_clusters(cfg: ClusterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian clusters with balanced labels (round-robin)."""
    rng = np.random.default_rng(cfg.seed)
    centers = rng.standard_normal((cfg.n_clusters, cfg.dim)) * cfg.center_scale
    labels = np.arange(cfg.n_points) % cfg.n_clusters
    X = centers[labels] + cfg.spread * rng.standard_normal((cfg.n_points, cfg.dim))
    return X, labels


@dataclass
class Split:
    train: np.ndarray  # indices into the full set, subset of db
    query: np.ndarray
    db: np.ndarray


def split_dataset(labels, n_query_per_class: int, n_train_per_class: int, seed: int = 0) -> Split:
    """Disjoint queries; everything else is the database, training drawn from it."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    q, tr = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < n_query_per_class + n_train_per_class:
            raise DataError(f"class {c} has only {idx.size} members")
        q.append(idx[:n_query_per_class])
        tr.append(idx[n_query_per_class : n_query_per_class + n_train_per_class])
    query = np.sort(np.concatenate(q))
    db = np.setdiff1d(np.arange(labels.size), query)
    return Split(train=np.sort(np.concatenate(tr)), query=query, db=db)


# --- feature matrices -----------------------------------------------------
# "SHFM" magic, u32 rows, u32 cols, then row-major little-endian float32.

_FEAT = struct.Struct("<4sII")


def write_features(path, X) -> Path:
    path = Path(path)
    X = np.asarray(X)
    if X.ndim != 2:
        raise DataError("features must be a 2-D matrix")
    path.write_bytes(_FEAT.pack(b"SHFM", *X.shape) + np.ascontiguousarray(X, dtype="<f4").tobytes())
    return path


def read_features(path) -> np.ndarray:
    """Binary container, or CSV/whitespace text for ``.csv``/``.txt`` files."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such feature file: {path}")
    if path.suffix.lower() in (".csv", ".txt", ".tsv"):
        delim = "," if path.suffix.lower() == ".csv" else None
        try:
            return np.atleast_2d(np.loadtxt(path, delimiter=delim, dtype=np.float64))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    raw = path.read_bytes()
    if len(raw) < _FEAT.size or raw[:4] != b"SHFM":
        raise DataError(f"{path}: not a feature matrix file")
    _, rows, cols = _FEAT.unpack_from(raw)
    if len(raw) != _FEAT.size + 4 * rows * cols:
        raise DataError(f"{path}: size does not match header ({rows}x{cols})")
    return np.frombuffer(raw, dtype="<f4", offset=_FEAT.size).reshape(rows, cols).astype(np.float64)


def write_labels(path, labels) -> Path:
    path = Path(path)
    path.write_text("".join(f"{int(v)}\n" for v in np.asarray(labels).ravel()))
    return path


def read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such labels file: {path}")
    try:
        return np.array([int(line) for line in path.read_text().split()], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_pairs(path, pairs) -> Path:
    path = Path(path)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
    path.write_text("".join(f"{a} {b} {s}\n" for a, b, s in pairs))
    return path


def read_pairs(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such pairs file: {path}")
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{ln}: expected 'a b s'")
        try:
            rows.append(tuple(int(p) for p in parts))
        except ValueError:
            raise DataError(f"{path}:{ln}: non-integer field") from None
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


_KINDS = ("XX", "YY", "XY")


def write_mm_pairs(path, pairs) -> Path:
    """``kind a b s`` lines; kind is XX, YY or XY."""
    path = Path(path)
    lines = []
    for k, a, b, s in pairs:
        kind = k if isinstance(k, str) else _KINDS[int(k)]
        lines.append(f"{kind} {int(a)} {int(b)} {int(s)}\n")
    path.write_text("".join(lines))
    return path


def read_mm_pairs(path) -> list[tuple[str, int, int, int]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such pairs file: {path}")
    out = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in _KINDS:
            raise DataError(f"{path}:{ln}: expected 'kind a b s' with kind in {_KINDS}")
        try:
            out.append((parts[0], int(parts[1]), int(parts[2]), int(parts[3])))
        except ValueError:
            raise DataError(f"{path}:{ln}: non-integer field") from None
    return out


# --- packed code files ----------------------------------------------------
# "SHCD" magic, u16 version, u32 m, u32 N, then N * ceil(m/4) packed bytes.

_CODES = struct.Struct("<4sHII")


def write_codes(path, codes) -> Path:
    path = Path(path)
    codes = as_codes(codes)
    codes = codes[None, :] if codes.ndim == 1 else codes
    n, m = codes.shape
    path.write_bytes(_CODES.pack(b"SHCD", 1, m, n) + pack_codes(codes).tobytes())
    return path


def read_codes(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such codes file: {path}")
    raw = path.read_bytes()
    if len(raw) < _CODES.size or raw[:4] != b"SHCD":
        raise DataError(f"{path}: not a codes file")
    _, version, m, n = _CODES.unpack_from(raw)
    nb = packed_nbytes(m)
    if version != 1 or len(raw) != _CODES.size + n * nb:
        raise DataError(f"{path}: corrupt codes file")
    packed = np.frombuffer(raw, dtype=np.uint8, offset=_CODES.size).reshape(n, nb)
    return unpack_codes(packed, m)
