"""Wynn epsilon acceleration of cluster-size energy sequences.

The transformed sequences follow
    eps_{-1}(E_C) = 0,   eps_0(E_C) = E_C,
    eps_{k+1}(E_C) = eps_{k-1}(E_{C+1}) + 1 / (eps_k(E_{C+1}) - eps_k(E_C)),
where only even-k columns estimate the limit (they are diagonal Pade
approximants).  The headline value is the last entry of the k = 4 column
and the error bar is the average final gradient across k = 0, 2, 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

DENOMINATOR_TOL = 1e-14


class ExtrapolationError(ValueError):
    pass


@dataclass
class EpsilonTable:
    """Triangular table of transformed sequences, column k has n-k entries."""

    seq: tuple[float, ...]
    cs: tuple[int, ...]
    columns: list[list[float]]
    regularized: list[tuple[int, int]] = field(default_factory=list)

    def column(self, k: int) -> list[float]:
        if k == -1:
            return [0.0] * len(self.seq)
        return self.columns[k]

    @property
    def max_k(self) -> int:
        return len(self.columns) - 1


@dataclass
class ExtrapolationResult:
    value: float
    error: float
    k_used: int
    c_max: int
    table: EpsilonTable
    flags: list[str] = field(default_factory=list)


def wynn_table(seq: Sequence[float], cs: Sequence[int] | None = None) -> EpsilonTable:
    """Build the full epsilon table for a sequence of at least two values.

    A vanishing denominator makes the next entry divergent; it is stored
    as +inf and flagged.  One level up the reciprocal of an infinite
    difference contributes zero, so eps_{k-1}(E_{C+1}) propagates through,
    the standard singular-rule treatment (a constant eps_k column passes
    its values two columns up unchanged).
    """
    seq = tuple(float(v) for v in seq)
    if len(seq) < 2:
        raise ExtrapolationError("need at least two sequence values")
    if cs is None:
        cs = tuple(range(len(seq)))
    else:
        cs = tuple(int(c) for c in cs)
        if len(cs) != len(seq):
            raise ExtrapolationError("cs and seq lengths differ")
    columns: list[list[float]] = [list(seq)]
    regularized: list[tuple[int, int]] = []
    prev = [0.0] * len(seq)  # eps_{-1}
    k = 0
    while len(columns[k]) >= 2:
        cur = columns[k]
        nxt: list[float] = []
        for i in range(len(cur) - 1):
            a, b = cur[i], cur[i + 1]
            p = prev[i + 1]
            if math.isinf(a) or math.isinf(b):
                # infinite difference (or doubly-singular pair): the
                # reciprocal contributes nothing either way
                nxt.append(p)
                if math.isinf(a) and math.isinf(b):
                    regularized.append((k + 1, i))
                continue
            den = b - a
            scale = max(1.0, abs(a), abs(b))
            if abs(den) < DENOMINATOR_TOL * scale:
                nxt.append(math.inf)
                regularized.append((k + 1, i))
            else:
                nxt.append(p + 1.0 / den)
        columns.append(nxt)
        prev = cur
        k += 1
    return EpsilonTable(seq, cs, columns, regularized)


def extrapolate(
    seq: Sequence[float] | EpsilonTable, cs: Sequence[int] | None = None
) -> ExtrapolationResult:
    """Extrapolated value eps_4(C_max) with the average-final-gradient bar.

    Sequences shorter than five points fall back to the highest available
    even column, flagged.  The error bar averages |delta eps_k| over the
    even columns k <= 4 that have at least two entries, where delta is the
    difference of the last two column entries.
    """
    table = seq if isinstance(seq, EpsilonTable) else wynn_table(seq, cs)
    n = len(table.seq)
    k_target = 4
    k_used = min(k_target, ((n - 1) // 2) * 2)
    flags: list[str] = []
    if k_used < k_target:
        flags.append(f"short_sequence_k{k_used}")
    while k_used > 0 and not math.isfinite(table.column(k_used)[-1]):
        k_used -= 2
        flags.append("nonfinite_fallback")
    value = table.column(k_used)[-1]
    deltas = []
    for k in range(0, k_target + 1, 2):
        col = table.column(k) if k <= table.max_k else []
        if len(col) >= 2 and math.isfinite(col[-1]) and math.isfinite(col[-2]):
            deltas.append(abs(col[-1] - col[-2]))
        elif k <= k_used:
            flags.append(f"missing_delta_k{k}")
    if not deltas:
        raise ExtrapolationError("sequence too short for an error estimate")
    error = sum(deltas) / len(deltas)
    if any(k <= k_used for k, _ in table.regularized):
        flags.append("regularized")
    return ExtrapolationResult(
        value=float(value),
        error=float(error),
        k_used=k_used,
        c_max=table.cs[-1],
        table=table,
        flags=flags,
    )
