"""Exact corruption probabilities for a delegation of size D with threshold t.

``binomial`` treats each delegate index as an independent draw with
corruption probability C/N. ``hypergeometric`` matches the implementation,
which draws D distinct indices. Both are evaluated in exact rationals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Iterable, Optional, Sequence, TextIO

from .errors import InvalidParameter

MODELS = ("binomial", "hypergeometric")
DEFAULT_PAIRS = ((6, 4), (10, 7), (14, 10), (18, 12), (24, 16))
DEFAULT_FRACTIONS = tuple(i / 20 for i in range(21))
FIGURE_N = 10**6
CSV_HEADER = ("D", "t", "fraction", "p_binomial", "p_hypergeometric")


def _check(N: int, C: int, D: int, t: int) -> None:
    if not 0 <= C <= N:
        raise InvalidParameter(f"need 0 <= C <= N, got C={C}, N={N}")
    if not 1 <= t <= D <= N:
        raise InvalidParameter(f"need 1 <= t <= D <= N, got t={t}, D={D}, N={N}")


def exact_corruption_probability(N: int, C: int, D: int, t: int, model: str = "binomial") -> Fraction:
    """Probability that at least ``t`` of a device's ``D`` delegates are corrupted."""
    _check(N, C, D, t)
    if model == "binomial":
        q = Fraction(C, N)
        return sum((comb(D, i) * q**i * (1 - q) ** (D - i) for i in range(t, D + 1)), Fraction(0))
    if model == "hypergeometric":
        hits = sum(comb(C, i) * comb(N - C, D - i) for i in range(t, D + 1))
        return Fraction(hits, comb(N, D))
    raise InvalidParameter(f"unknown model {model!r}; choose from {MODELS}")


def lemma4_bound(N: int, C: int, D: int) -> Fraction:
    """All-delegates-corrupted probability, (C/N)^D."""
    _check(N, C, D, D)
    return Fraction(C, N) ** D


@dataclass(frozen=True)
class ParamPoint:
    N: int
    C: int
    D: int
    t: int
    p: Fraction

    @property
    def p_float(self) -> float:
        return float(self.p)


def param_point(N: int, C: int, D: int, t: int, model: str = "binomial") -> ParamPoint:
    return ParamPoint(N, C, D, t, exact_corruption_probability(N, C, D, t, model))


def corrupted_count(N: int, fraction: float) -> int:
    if not 0 <= fraction <= 1:
        raise InvalidParameter(f"fraction must lie in [0, 1], got {fraction}")
    return int(Fraction(fraction).limit_denominator(10**9) * N)


def search_parameters(
    N: int, C: int, target_p: float, D_max: int, model: str = "binomial"
) -> Optional[tuple[int, int]]:
    """Smallest D, then smallest t (most slack D-t), with p <= target_p."""
    if not 0 < target_p <= 1:
        raise InvalidParameter(f"target must lie in (0, 1], got {target_p}")
    target = Fraction(target_p)
    for D in range(1, min(D_max, N) + 1):
        for t in range(1, D + 1):
            if exact_corruption_probability(N, C, D, t, model) <= target:
                return D, t
    return None


def figure2_rows(
    pairs: Sequence[tuple[int, int]] = DEFAULT_PAIRS,
    fractions: Iterable[float] = DEFAULT_FRACTIONS,
    N: int = FIGURE_N,
) -> list[tuple[int, int, float, float, float]]:
    fractions = list(fractions)
    rows = []
    for D, t in pairs:
        for f in fractions:
            C = corrupted_count(N, f)
            p_bin = exact_corruption_probability(N, C, D, t, "binomial")
            p_hyp = exact_corruption_probability(N, C, D, t, "hypergeometric")
            rows.append((D, t, f, float(p_bin), float(p_hyp)))
    return rows


def emit_figure2_data(
    pairs: Sequence[tuple[int, int]] = DEFAULT_PAIRS,
    fractions: Iterable[float] = DEFAULT_FRACTIONS,
    out: Optional[TextIO] = None,
    N: int = FIGURE_N,
) -> list[tuple[int, int, float, float, float]]:
    rows = figure2_rows(pairs, fractions, N)
    if out is not None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for D, t, f, pb, ph in rows:
            writer.writerow((D, t, f"{f:g}", repr(pb), repr(ph)))
    return rows
