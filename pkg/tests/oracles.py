"""Independent brute-force oracles used to freeze and cross-check expected values.

Everything here is deliberately written against the definitions, not against
the package modules under test, and stays free of any package import.
"""

from __future__ import annotations

import math


def two_pass_numeric_profile(values: list[float]) -> dict:
    """Mean/median/min/max/population-stddev via a separate two-pass pass."""
    n = len(values)
    if n == 0:
        raise ValueError("oracle requires at least one value")
    total = math.fsum(values)
    mean = total / n
    squared = math.fsum((v - mean) ** 2 for v in values)
    stddev = math.sqrt(squared / n)
    ordered = sorted(values)
    if n % 2 == 1:
        median = ordered[n // 2]
    else:
        median = (ordered[n // 2 - 1] + ordered[n // 2]) / 2
    return {
        "mean": mean,
        "median": median,
        "min": ordered[0],
        "max": ordered[-1],
        "stddev": stddev,
    }


def score_and_sort(
    row_ids: list[int],
    factor_weights: list[int],
    match_sets: list[set[int]],
) -> list[tuple[int, int]]:
    """Weighted-score ranking oracle over integer-hundredth weights.

    Returns (row_id, score_hundredths) sorted by score descending, ties by
    ascending row id. `factor_weights` and `match_sets` run in factor-card
    order and must only contain factors that count toward the score.
    """
    scored = []
    for rid in row_ids:
        score = 0
        for weight, matched in zip(factor_weights, match_sets):
            if rid in matched:
                score += weight
        scored.append((rid, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored
