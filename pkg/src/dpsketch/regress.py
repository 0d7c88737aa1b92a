"""Differentially private linear regression from a sketched design matrix.

The design matrix is lifted and sketched once (same layout as the multiply
mechanism); each query vector is sketched lazily with the same seeded
projection and the sketched least-squares problem is solved through the
minimal-residual kernel on its normal system.

The returned solution is the raw minimizer of the lifted problem, which is
a ridge regression with penalty s^2: users expecting ordinary
least-squares semantics will observe shrinkage. The mechanism's additive
error term absorbs that regularization bias.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import guard, numerics
from .errors import BudgetExhaustedError, ContractViolationError, SpectralGuardError
from .matprod import lift_layout
from .sketch import GaussianSketcher, Sketch


@dataclass
class RegressState:
    n: int
    d: int
    r: int
    s: float
    budget: guard.PrivacyBudget
    acc: guard.AccuracySpec
    sketcher: GaussianSketcher
    ya: Sketch
    query_ceiling: Optional[int] = None
    queries_answered: int = 0

    def space_entries(self) -> int:
        return int(self.ya.data.size)

    def _data_block(self) -> np.ndarray:
        _m, lo, hi = lift_layout(self.n, self.d)
        return self.sketcher.column_block(lo, hi)

    def ingest_column(self, c: int, col) -> None:
        if not (0 <= c < self.d):
            raise ContractViolationError(f"column {c} outside [0, {self.d})")
        x = numerics.as_vector(col, "column")
        if x.size != self.n:
            raise ContractViolationError(f"column length {x.size}, expected {self.n}")
        if not x.any():
            return
        self.ya.data[:, c] += self._data_block() @ x

    def ingest_row(self, i: int, row) -> None:
        # Row-streaming adapter: rank-1 turnstile update against one
        # on-demand projection column.
        if not (0 <= i < self.n):
            raise ContractViolationError(f"row index {i} outside [0, {self.n})")
        x = numerics.as_vector(row, "row")
        if x.size != self.d:
            raise ContractViolationError(f"row length {x.size}, expected {self.d}")
        _m, lo, _hi = lift_layout(self.n, self.d)
        omega_col = self.sketcher.column_block(lo + i, lo + i + 1)[:, 0]
        self.ya.data += np.outer(omega_col, x)

    def query(self, b) -> np.ndarray:
        """Answer min_x ||A x - b|| from the sketch.

        The query vector is lifted with zero identity coordinates (only the
        design matrix carries the lift), sketched with the same projection,
        and the sketched problem ||Ya x - Yb|| is minimized through the
        normal system. Dividing both sides by r would not change the
        minimizer, so no rescaling is applied.
        """
        if self.query_ceiling is not None and self.queries_answered >= self.query_ceiling:
            raise BudgetExhaustedError(
                f"query ceiling of {self.query_ceiling} reached"
            )
        x = numerics.as_vector(b, "b")
        if x.size != self.n:
            raise ContractViolationError(f"query length {x.size}, expected {self.n}")
        yb = self._data_block() @ x
        gram = self.ya.data.T @ self.ya.data
        rhs = (self.ya.data.T @ yb)[None, :]
        solution = numerics.minres_solve(gram, rhs)[0]
        self.queries_answered += 1
        return solution

    def composed_budget(self, delta_prime: float) -> guard.PrivacyBudget:
        """Budget consumed by the queries answered so far, by composition."""
        if self.queries_answered == 0:
            raise ContractViolationError("no queries answered yet")
        return guard.compose(
            self.budget.eps, self.budget.delta, self.queries_answered, delta_prime
        )


def new_regress(
    n: int,
    d: int,
    budget: guard.PrivacyBudget,
    acc: guard.AccuracySpec,
    seed: int,
    max_queries: Optional[int] = None,
    s_override: float | None = None,
    enforce_guard: bool = True,
) -> RegressState:
    """Build a regression state; parameters are delegated to the guard module.

    When ``max_queries`` is given it both caps query() calls and inflates
    the per-query failure allowance, replacing ln(1/beta) by
    ln(max_queries/beta) in the sketch dimension.
    """
    if n < 1 or d < 1:
        raise ContractViolationError("matrix dimensions must be >= 1")
    if max_queries is None:
        r = guard.linreg_sketch_dim(acc, d)
    else:
        if max_queries < 1:
            raise ContractViolationError("max_queries must be >= 1")
        inflated = guard.AccuracySpec(acc.alpha, acc.beta / max_queries)
        r = guard.linreg_sketch_dim(inflated, d)
    s = s_override if s_override is not None else guard.lift_scale_s(budget, r)
    if enforce_guard:
        required = guard.sigma_min_psg1(budget, r)
        if s < required:
            raise SpectralGuardError(
                f"lift s={s:.4g} fails the spectral guard threshold {required:.4g}"
            )
    m, _lo, _hi = lift_layout(n, d)
    sketcher = GaussianSketcher(seed, r=r, m=m, store_omega=False)
    ya = Sketch.empty(sketcher, "psg1", d)
    ya.data[:] = s * sketcher.column_block(0, d)
    return RegressState(
        n=n, d=d, r=r, s=float(s), budget=budget, acc=acc,
        sketcher=sketcher, ya=ya, query_ceiling=max_queries,
    )
