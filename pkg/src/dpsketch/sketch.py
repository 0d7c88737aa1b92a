"""Seeded Gaussian sketchers and turnstile-additive sketch state.

The projection matrix is a pure function of (seed, r, m): raw 64-bit words
come from a Philox counter stream and are mapped through Box-Muller, column
by column. Any column range can therefore be regenerated bit-exactly
without storing the whole matrix, which is what the multiply/regression
mechanisms rely on to keep their retained state at sketch size only.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ContractViolationError, FormatError, NumericFailureError
from .numerics import as_vector

_U64 = (1 << 64) - 1

# Per-sketcher float64 entry budget (1 GiB of matrix).
MAX_SKETCH_ENTRIES = 1 << 27

MAGIC = b"DPSK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBIIIQQ")
_KIND_CODES = {"psg1": 1, "psg2": 2}
_KIND_NAMES = {code: name for name, code in _KIND_CODES.items()}


def fingerprint_of(seed: int, r: int, m: int) -> int:
    """Stable 64-bit hash of the sketcher identity (seed, r, m)."""
    digest = hashlib.blake2b(
        struct.pack("<QII", seed & _U64, r, m), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def _raw_words(seed: int, offset: int, count: int) -> np.ndarray:
    # Philox advances in 256-bit counter blocks of four 64-bit words, so
    # offsets must be block-aligned; column strides are kept multiples of 4.
    if offset % 4:
        raise ContractViolationError(f"word offset {offset} is not block-aligned")
    bg = np.random.Philox(key=seed & _U64)
    if offset:
        bg.advance(offset // 4)
    return bg.random_raw(count)


def _box_muller(words: np.ndarray) -> np.ndarray:
    # One normal per 64-bit word; words length must be even.
    pairs = words.reshape(-1, 2)
    u1 = ((pairs[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (pairs[:, 1] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * np.pi) * u2
    out = np.empty(words.size)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out


class GaussianSketcher:
    """Seeded r x m standard-normal matrix with deterministic regeneration.

    With ``store_omega=True`` the matrix is materialized once and kept (the
    low-rank mechanism requires this); with ``store_omega=False`` columns
    are regenerated from the seed on demand and nothing is retained beyond
    the identity tuple.
    """

    def __init__(self, seed: int, r: int, m: int, store_omega: bool = True):
        if r < 1 or m < 1:
            raise ContractViolationError(f"sketch dimensions must be >= 1, got r={r}, m={m}")
        if r * m > MAX_SKETCH_ENTRIES:
            raise CapacityError(
                f"sketch of {r}x{m} exceeds the {MAX_SKETCH_ENTRIES} entry budget"
            )
        self.seed = int(seed) & _U64
        self.r = int(r)
        self.m = int(m)
        self.store_omega = bool(store_omega)
        self.fingerprint = fingerprint_of(self.seed, self.r, self.m)
        # Raw words consumed per column: a multiple of 4 so every column
        # starts on a Philox counter block and Box-Muller pairs never
        # straddle columns.
        self._wpc = 4 * ((self.r + 3) // 4)
        self._omega = self._generate_block(0, self.m) if store_omega else None
        self._moment_check()

    def _generate_block(self, j0: int, j1: int) -> np.ndarray:
        normals = _box_muller(_raw_words(self.seed, j0 * self._wpc, (j1 - j0) * self._wpc))
        block = normals.reshape(j1 - j0, self._wpc)[:, : self.r]
        return np.ascontiguousarray(block.T)

    def column_block(self, j0: int, j1: int) -> np.ndarray:
        """Columns [j0, j1) of omega, shape (r, j1-j0). Treat as read-only."""
        if not (0 <= j0 <= j1 <= self.m):
            raise ContractViolationError(f"column range [{j0}, {j1}) outside [0, {self.m})")
        if self._omega is not None:
            return self._omega[:, j0:j1]
        return self._generate_block(j0, j1)

    @property
    def omega(self) -> np.ndarray:
        """The full r x m matrix (regenerated per call when not stored)."""
        return self.column_block(0, self.m)

    def _moment_check(self):
        n = self.r * self.m
        if self._omega is not None:
            mean = float(self._omega.mean())
            var = float(self._omega.var())
        else:
            chunk = max(1, 65536 // self.r)
            total = 0.0
            total_sq = 0.0
            for j0 in range(0, self.m, chunk):
                block = self._generate_block(j0, min(j0 + chunk, self.m))
                total += float(block.sum())
                total_sq += float(np.square(block).sum())
            mean = total / n
            var = total_sq / n - mean * mean
        scale = 1.0 / np.sqrt(n)
        if abs(mean) > 5.0 * scale or abs(var - 1.0) > 10.0 * scale:
            raise NumericFailureError(
                f"sketcher moment sanity check failed: mean={mean:.4g}, var={var:.4g}"
            )

    def psg1(self, v) -> np.ndarray:
        """Project a length-m vector: omega @ v."""
        x = as_vector(v, "v")
        if x.size != self.m:
            raise ContractViolationError(f"psg1 expects length {self.m}, got {x.size}")
        return self.omega @ x

    def psg2(self, v) -> np.ndarray:
        """Lift-and-project a length-m vector: omega.T @ (omega @ v).

        Computed literally as omega.T applied to psg1(v), so the two are
        bit-identical by construction.
        """
        x = as_vector(v, "v")
        if x.size != self.m:
            raise ContractViolationError(f"psg2 expects length {self.m}, got {x.size}")
        om = self.omega
        return om.T @ (om @ x)


@dataclass
class Sketch:
    """Linear sketch with additive turnstile updates.

    ``data`` is (r, c) for psg1 sketches and (m, c) for psg2 sketches; the
    fingerprint ties the sketch to the sketcher that produced it.
    """

    kind: str
    data: np.ndarray
    col_count: int
    fingerprint: int
    seed: int
    r: int
    m: int

    @classmethod
    def empty(cls, sketcher: GaussianSketcher, kind: str, col_count: int) -> "Sketch":
        if kind not in _KIND_CODES:
            raise ContractViolationError(f"unknown sketch kind {kind!r}")
        if col_count < 0:
            raise ContractViolationError("col_count must be non-negative")
        rows = sketcher.r if kind == "psg1" else sketcher.m
        return cls(
            kind=kind,
            data=np.zeros((rows, col_count)),
            col_count=col_count,
            fingerprint=sketcher.fingerprint,
            seed=sketcher.seed,
            r=sketcher.r,
            m=sketcher.m,
        )

    def update_column(self, sketcher: GaussianSketcher, col: int, v) -> None:
        """Add omega@v (psg1) or omega.T@omega@v (psg2) into column ``col``."""
        if sketcher.fingerprint != self.fingerprint:
            raise ContractViolationError("sketcher fingerprint does not match sketch")
        if not (0 <= col < self.col_count):
            raise ContractViolationError(f"column {col} outside [0, {self.col_count})")
        update = sketcher.psg1(v) if self.kind == "psg1" else sketcher.psg2(v)
        self.data[:, col] += update


def merge(a: Sketch, b: Sketch) -> Sketch:
    """Entrywise sum of two sketches of the same kind and fingerprint."""
    if a.kind != b.kind:
        raise ContractViolationError(f"cannot merge kinds {a.kind!r} and {b.kind!r}")
    if a.fingerprint != b.fingerprint:
        raise ContractViolationError("cannot merge sketches with different fingerprints")
    if a.data.shape != b.data.shape:
        raise ContractViolationError("cannot merge sketches with different shapes")
    return Sketch(
        kind=a.kind,
        data=a.data + b.data,
        col_count=a.col_count,
        fingerprint=a.fingerprint,
        seed=a.seed,
        r=a.r,
        m=a.m,
    )


def serialize(sketch: Sketch) -> bytes:
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        _KIND_CODES[sketch.kind],
        sketch.r,
        sketch.m,
        sketch.col_count,
        sketch.seed,
        sketch.fingerprint,
    )
    payload = np.ascontiguousarray(sketch.data, dtype="<f8").tobytes()
    return header + payload


def deserialize(buf: bytes) -> Sketch:
    if len(buf) < _HEADER.size:
        raise FormatError(f"sketch blob truncated at offset {len(buf)} (header incomplete)")
    magic, version, kind_code, r, m, c, seed, fp = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported sketch format version {version}")
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown sketch kind code {kind_code}")
    kind = _KIND_NAMES[kind_code]
    rows = r if kind == "psg1" else m
    expected = _HEADER.size + rows * c * 8
    if len(buf) != expected:
        raise FormatError(
            f"sketch payload truncated at offset {len(buf)}, expected {expected} bytes"
        )
    if fp != fingerprint_of(seed, r, m):
        raise FormatError("fingerprint does not match header identity")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(rows, c).copy()
    if data.size and not np.isfinite(data).all():
        raise FormatError("sketch payload contains non-finite entries")
    return Sketch(
        kind=kind, data=data, col_count=c, fingerprint=fp, seed=seed, r=r, m=m
    )
