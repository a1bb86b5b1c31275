"""Ternary hash codes: distances, quantization, sparsity and packing.

Codes are stored as ``int8`` arrays over the alphabet {-1, 0, +1}. A single
code has shape ``(m,)``; a database of codes has shape ``(N, m)``.

Packed layout: 2 bits per symbol (``00`` = 0, ``01`` = +1, ``10`` = -1),
symbol ``i`` occupies bits ``2*(i % 4)`` and ``2*(i % 4) + 1`` of byte
``i // 4`` (little-endian within bytes). A packed code therefore takes
``ceil(m / 4)`` bytes and unused trailing bits are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CodeStats",
    "as_codes",
    "code_stats",
    "code_to_text",
    "hamming_distance",
    "pack_codes",
    "packed_distances",
    "packed_nbytes",
    "quantize",
    "sparsity",
    "text_to_code",
    "to_words",
    "unpack_codes",
]

_SYMBOL_OF_BITS = np.array([0, 1, -1, 0], dtype=np.int8)  # 0b11 is never written


def as_codes(codes, m: int | None = None) -> np.ndarray:
    """Validate and convert to an ``int8`` ternary array."""
    arr = np.asarray(codes)
    if arr.ndim not in (1, 2):
        raise ValueError(f"codes must be 1-D or 2-D, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isin(arr, (-1.0, 0.0, 1.0))):
            raise ValueError("code symbols must lie in {-1, 0, +1}")
    out = arr.astype(np.int8, copy=False)
    if arr.dtype.kind != "f" and np.any((out < -1) | (out > 1)):
        raise ValueError("code symbols must lie in {-1, 0, +1}")
    if out.shape[-1] < 1:
        raise ValueError("code length must be >= 1")
    if m is not None and out.shape[-1] != m:
        raise ValueError(f"code length {out.shape[-1]} != expected {m}")
    return out


def hamming_distance(a, b) -> int:
    """Number of positions where two ternary codes differ.

    On zero-free codes this equals ``m/2 - sum(a*b)/2``.
    """
    a = as_codes(a)
    b = as_codes(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("hamming_distance expects single codes")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return int(np.count_nonzero(a != b))


def quantize(z, threshold: float = 0.0) -> np.ndarray:
    """Map continuous outputs to ternary symbols.

    ``sign(z_i)`` where ``|z_i| > threshold``, else 0. Works on a single code
    or a batch.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    out = np.sign(z).astype(np.int8)
    out[np.abs(z) <= threshold] = 0
    return out


def sparsity(c) -> float | np.ndarray:
    """Fraction of nonzero symbols; per row when given a batch."""
    c = np.asarray(c)
    return np.count_nonzero(c, axis=-1) / c.shape[-1] if c.ndim > 1 else np.count_nonzero(c) / c.shape[-1]


@dataclass
class CodeStats:
    unique_code_count: int
    avg_neighbors_at_r: dict[int, float] = field(default_factory=dict)


def code_stats(db, radii=(0, 1, 2)) -> CodeStats:
    """Unique codes and mean r-ball occupancy with the database as queries."""
    db = as_codes(db)
    if db.ndim == 1:
        db = db[None, :]
    if db.shape[0] == 0:
        raise ValueError("empty database")
    uniq, counts = np.unique(db, axis=0, return_counts=True)
    # Distances between unique codes, weighted by multiplicities, keep this
    # quadratic in the number of distinct codes rather than in N.
    words = to_words(pack_codes(uniq))

    hist = np.zeros(db.shape[1] + 1, dtype=np.int64)
    for i in range(uniq.shape[0]):
        d = packed_distances(words, words[i])
        hist += counts[i] * np.bincount(d, weights=counts, minlength=db.shape[1] + 1).astype(np.int64)
    cum = np.cumsum(hist)
    n = db.shape[0]
    avg = {}
    for r in radii:
        r = int(r)
        if r < 0:
            raise ValueError("radius must be >= 0")
        avg[r] = float(cum[min(r, db.shape[1])] / n)
    return CodeStats(unique_code_count=int(uniq.shape[0]), avg_neighbors_at_r=avg)


def packed_nbytes(m: int) -> int:
    return (m + 3) // 4


def pack_codes(codes) -> np.ndarray:
    """Pack ternary codes into ``uint8`` rows of ``ceil(m/4)`` bytes."""
    codes = as_codes(codes)
    single = codes.ndim == 1
    if single:
        codes = codes[None, :]
    n, m = codes.shape
    nb = packed_nbytes(m)
    bits = np.zeros((n, nb * 4), dtype=np.uint8)
    bits[:, :m] = np.where(codes == 1, 1, np.where(codes == -1, 2, 0))
    bits = bits.reshape(n, nb, 4)
    packed = bits[:, :, 0] | (bits[:, :, 1] << 2) | (bits[:, :, 2] << 4) | (bits[:, :, 3] << 6)
    packed = packed.astype(np.uint8)
    return packed[0] if single else packed


def unpack_codes(packed, m: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    single = packed.ndim == 1
    if single:
        packed = packed[None, :]
    if packed.shape[1] != packed_nbytes(m):
        raise ValueError(f"packed width {packed.shape[1]} does not match m={m}")
    shifts = np.array([0, 2, 4, 6], dtype=np.uint8)
    bits = (packed[:, :, None] >> shifts) & 0b11
    codes = _SYMBOL_OF_BITS[bits.reshape(packed.shape[0], -1)[:, :m]]
    return codes[0] if single else codes


_LOW_BITS = np.uint64(0x5555555555555555)


def to_words(packed) -> np.ndarray:
    """View packed rows as little-endian ``uint64`` words (zero padded)."""
    packed = np.asarray(packed, dtype=np.uint8)
    single = packed.ndim == 1
    if single:
        packed = packed[None, :]
    n, nb = packed.shape
    nw = (nb + 7) // 8
    buf = np.zeros((n, nw * 8), dtype=np.uint8)
    buf[:, :nb] = packed
    words = buf.view("<u8").astype(np.uint64, copy=False)
    return words[0] if single else words


def packed_distances(db_words: np.ndarray, q_words: np.ndarray) -> np.ndarray:
    """Ternary Hamming distance from one packed query to every packed row.

    Two 2-bit symbols differ iff their XOR is nonzero; folding the high bit
    onto the low bit leaves one set bit per mismatching position.
    """
    x = db_words ^ q_words
    x = (x | (x >> np.uint64(1))) & _LOW_BITS
    return np.bitwise_count(x).sum(axis=-1, dtype=np.int64)


def code_to_text(code) -> str:
    code = as_codes(code)
    return "".join("+" if s == 1 else "-" if s == -1 else "0" for s in code)


def text_to_code(text: str) -> np.ndarray:
    table = {"+": 1, "-": -1, "0": 0}
    try:
        return np.array([table[ch] for ch in text.strip()], dtype=np.int8)
    except KeyError as exc:
        raise ValueError(f"invalid code symbol {exc.args[0]!r}") from None
