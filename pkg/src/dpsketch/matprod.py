"""Differentially private matrix multiplication from column streams.

Each streamed column is lifted with a scaled identity coordinate so the
streamed matrix provably clears the projection guard, then pushed through
the seeded Gaussian sketcher. The product query de-biases the deterministic
lift cross-term and rescales by the sketch dimension, so the returned
matrix estimates A.T @ B itself.

Lifted column layout (length 2(n+d), d = max(d1, d2)):

    [0, d)        s * e_col      identity lift
    [d, 2d+n)     zeros          spacer
    [2d+n, 2d+2n) data column    the streamed content

The identity-lift contribution of every column is data-independent, so it
is seeded into the sketches at construction; ingestion accumulates only
data contributions, which keeps updates exactly linear (turnstile).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import guard, numerics
from .errors import ContractViolationError, SpectralGuardError
from .sketch import GaussianSketcher, Sketch


def lift_layout(n: int, d: int) -> tuple[int, int, int]:
    """(total length, data block offset, data block end) of the lift."""
    return 2 * (n + d), 2 * d + n, 2 * d + 2 * n


def lifted_matrix(a: np.ndarray, s: float, d: int) -> np.ndarray:
    """Densify the lifted version of ``a`` (testing/oracle use only)."""
    n, cols = a.shape
    m, lo, _hi = lift_layout(n, d)
    out = np.zeros((m, cols))
    out[:cols, :cols][np.diag_indices(cols)] = s
    out[lo:, :] = a
    return out


@dataclass
class MatProdState:
    n: int
    d1: int
    d2: int
    d: int
    r: int
    s: float
    budget: guard.PrivacyBudget
    acc: guard.AccuracySpec
    sketcher: GaussianSketcher
    ya: Sketch
    yb: Sketch

    def space_entries(self) -> int:
        """Retained entries: the two sketches (omega is regenerated on demand)."""
        return int(self.ya.data.size + self.yb.data.size)

    def _data_block(self) -> np.ndarray:
        _m, lo, hi = lift_layout(self.n, self.d)
        return self.sketcher.column_block(lo, hi)

    def _ingest(self, sk: Sketch, width: int, col_index: int, col) -> None:
        if not (0 <= col_index < width):
            raise ContractViolationError(f"column {col_index} outside [0, {width})")
        x = numerics.as_vector(col, "column")
        if x.size != self.n:
            raise ContractViolationError(f"column length {x.size}, expected {self.n}")
        if not x.any():
            return
        sk.data[:, col_index] += self._data_block() @ x

    def ingest_a_column(self, a: int, col) -> None:
        self._ingest(self.ya, self.d1, a, col)

    def ingest_b_column(self, b: int, col) -> None:
        self._ingest(self.yb, self.d2, b, col)

    def _ingest_row(self, sk: Sketch, width: int, i: int, row) -> None:
        # Row-streaming adapter: one turnstile rank-1 update touching a
        # single on-demand column of omega, so streaming never materializes
        # the projection.
        if not (0 <= i < self.n):
            raise ContractViolationError(f"row index {i} outside [0, {self.n})")
        x = numerics.as_vector(row, "row")
        if x.size != width:
            raise ContractViolationError(f"row length {x.size}, expected {width}")
        _m, lo, _hi = lift_layout(self.n, self.d)
        omega_col = self.sketcher.column_block(lo + i, lo + i + 1)[:, 0]
        sk.data += np.outer(omega_col, x)

    def ingest_a_row(self, i: int, row) -> None:
        self._ingest_row(self.ya, self.d1, i, row)

    def ingest_b_row(self, i: int, row) -> None:
        self._ingest_row(self.yb, self.d2, i, row)

    def product_query(self) -> np.ndarray:
        """Estimate A.T @ B from the sketches.

        The raw cross product estimates r * (s^2 I~ + A.T B); dividing by r
        and subtracting the deterministic lift expectation s^2 I~ (the
        partial identity) leaves an unbiased estimate of A.T @ B.
        """
        est = (self.ya.data.T @ self.yb.data) / self.r
        dmin = min(self.d1, self.d2)
        est[np.diag_indices(dmin)] -= self.s**2
        return est

    def merge(self, other: "MatProdState") -> "MatProdState":
        """Combine two shards of the same stream.

        Data contributions add; the deterministic lift contribution is
        common to both shards and must enter the result exactly once.
        """
        if self.sketcher.fingerprint != other.sketcher.fingerprint:
            raise ContractViolationError("cannot merge states with different sketchers")
        if (self.d1, self.d2, self.n) != (other.d1, other.d2, other.n):
            raise ContractViolationError("cannot merge states with different shapes")
        merged = new_matprod(
            self.n, self.d1, self.d2, self.budget, self.acc, self.sketcher.seed
        )
        lift_a = _lift_part(self.sketcher, self.s, self.d1)
        lift_b = _lift_part(self.sketcher, self.s, self.d2)
        merged.ya.data[:] = self.ya.data + other.ya.data - lift_a
        merged.yb.data[:] = self.yb.data + other.yb.data - lift_b
        return merged


def _lift_part(sketcher: GaussianSketcher, s: float, width: int) -> np.ndarray:
    return s * sketcher.column_block(0, width)


def new_matprod(
    n: int,
    d1: int,
    d2: int,
    budget: guard.PrivacyBudget,
    acc: guard.AccuracySpec,
    seed: int,
    s_override: float | None = None,
    enforce_guard: bool = True,
) -> MatProdState:
    if n < 1 or d1 < 1 or d2 < 1:
        raise ContractViolationError("matrix dimensions must be >= 1")
    d = max(d1, d2)
    r = guard.matmult_sketch_dim(acc)
    s = s_override if s_override is not None else guard.lift_scale_s(budget, r)
    if enforce_guard:
        required = guard.sigma_min_psg1(budget, r)
        if s < required:
            raise SpectralGuardError(
                f"lift s={s:.4g} fails the spectral guard threshold {required:.4g}"
            )
    m, _lo, _hi = lift_layout(n, d)
    sketcher = GaussianSketcher(seed, r=r, m=m, store_omega=False)
    ya = Sketch.empty(sketcher, "psg1", d1)
    yb = Sketch.empty(sketcher, "psg1", d2)
    ya.data[:] = _lift_part(sketcher, s, d1)
    yb.data[:] = _lift_part(sketcher, s, d2)
    return MatProdState(
        n=n, d1=d1, d2=d2, d=d, r=r, s=float(s),
        budget=budget, acc=acc, sketcher=sketcher, ya=ya, yb=yb,
    )
