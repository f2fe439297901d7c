"""Low-rank residual algebra: factor pairs, weighted fusion, and lazy application.

A residual is stored as a pair of factors ``b @ a`` with small inner rank.
Fusing a set of weighted residuals into a frozen base matrix produces a new
matrix; the lazy path applies the same sum to a vector without ever forming
the full residual, which is what keeps per-prompt merging cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

# One fusion summand: a residual and its blend weight in [0, 1].
WeightedEntry = Tuple["LowRankUpdate", float]


@dataclass(frozen=True)
class LowRankUpdate:
    """Factored residual ``scale * b @ a`` for one target matrix.

    ``b`` has shape (d_out, rank) and ``a`` has shape (rank, d_in).  ``scale``
    is an optional global multiplier, kept at 1.0 unless a caller wants a
    rank-scaling convention.
    """

    b: np.ndarray
    a: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if self.b.ndim != 2 or self.a.ndim != 2:
            raise ValueError("factors must be 2-D arrays")
        if self.b.shape[1] != self.a.shape[0]:
            raise ValueError(
                f"factor shapes do not chain: b is {self.b.shape}, a is {self.a.shape}"
            )
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not (np.isfinite(self.b).all() and np.isfinite(self.a).all()):
            raise ValueError("factors must be finite")

    @property
    def rank(self) -> int:
        return self.b.shape[1]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    @property
    def d_in(self) -> int:
        return self.a.shape[1]


def make_lowrank(
    d_out: int, d_in: int, rank: int, init_std: float = 0.02, seed: int = 0
) -> LowRankUpdate:
    """Create a fresh residual: ``b`` all zeros, ``a`` zero-mean Gaussian.

    Zero ``b`` guarantees the materialized residual starts at exactly zero, so
    training begins at the unmodified base matrix.  Deterministic given seed.
    """
    if d_out < 1 or d_in < 1:
        raise ValueError("dimensions must be >= 1")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    b = np.zeros((d_out, rank))
    a = rng.normal(0.0, init_std, size=(rank, d_in))
    return LowRankUpdate(b=b, a=a)


def materialize(update: LowRankUpdate) -> np.ndarray:
    """Form the dense residual ``scale * b @ a``."""
    out = update.b @ update.a
    if update.scale != 1.0:
        out = update.scale * out
    return out


def _check_compatible(base: np.ndarray, entries: Sequence[WeightedEntry]) -> None:
    if base.ndim != 2:
        raise ValueError("base must be a 2-D matrix")
    for update, weight in entries:
        if (update.d_out, update.d_in) != base.shape:
            raise ValueError(
                f"update shape ({update.d_out}, {update.d_in}) does not match "
                f"base shape {base.shape}"
            )
        if not 0.0 <= weight <= 1.0:
            raise ValueError(f"weight {weight} outside [0, 1]")


def fuse(base: np.ndarray, entries: Sequence[WeightedEntry]) -> np.ndarray:
    """Return ``base + sum_i w_i * b_i @ a_i`` as a new matrix.

    The base is never mutated.  Entries are accumulated in the order given;
    callers that need bit-reproducible sums across runs should pass entries in
    a canonical order (the planner sorts by character id).
    """
    _check_compatible(base, entries)
    out = base.copy()
    for update, weight in entries:
        if weight == 0.0:
            continue
        out += (weight * update.scale) * (update.b @ update.a)
    return out


def fused_apply(
    base: np.ndarray, entries: Sequence[WeightedEntry], x: np.ndarray
) -> np.ndarray:
    """Compute ``fuse(base, entries) @ x`` without materializing any residual.

    Cost is one base matvec plus O(rank * (d_in + d_out)) per entry.  ``x``
    may be a vector or a (d_in, n) batch.  Zero-weight entries are skipped
    entirely so the result is bit-identical to the bare base path.
    """
    if x.shape[0] != base.shape[1]:
        raise ValueError(
            f"input length {x.shape[0]} does not match base columns {base.shape[1]}"
        )
    _check_compatible(base, entries)
    out = base @ x
    for update, weight in entries:
        if weight == 0.0:
            continue
        out += (weight * update.scale) * (update.b @ (update.a @ x))
    return out
