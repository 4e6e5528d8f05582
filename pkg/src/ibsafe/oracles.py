"""Slow, independent reference computations used to anchor the fast paths.

Nothing here shares code with :mod:`ibsafe.gmdp`; every quantity is
recomputed from first principles (joint enumeration, explicit recursion
over portfolios, or closed-form products).
"""
from __future__ import annotations

import math
from itertools import product
from typing import Callable, Iterable

from .model import Instance, StateSet, arm_bit, members

Action = tuple[int, int]  # (i, j); i == j for a singleton, (0, 0) to stop


def brute_force_terminal_reward(inst: Instance, explored: StateSet) -> float:
    """``E[max_a X(a) * 1{some explored arm > 0}]`` by full joint enumeration."""
    if explored == 0:
        return 0.0
    idx = [i - 1 for i in members(explored)]
    terms = []
    for combo in product(*(d.support for d in inst.distributions)):
        if any(combo[i][0] > 0 for i in idx):
            prob = math.prod(p for _, p in combo)
            terms.append(prob * max(v for v, _ in combo))
    return math.fsum(terms)


def recursive_value(inst: Instance, s: StateSet, choose: Callable[[StateSet], Action],
                    leaf: Callable[[StateSet], float], memo: dict | None = None) -> float:
    """Evaluate a stationary policy by plain memoized recursion on portfolios.

    ``choose(s)`` returns ``(i, j)``; the mixing weights are recomputed here
    directly from the prior means.
    """
    if memo is None:
        memo = {}
    if s in memo:
        return memo[s]
    i, j = choose(s)
    if i == 0:
        out = leaf(s)
    elif i == j:
        out = recursive_value(inst, s & ~arm_bit(i), choose, leaf, memo)
    else:
        mi, mj = inst.means[i - 1], inst.means[j - 1]
        wi, wj = -mj / (mi - mj), mi / (mi - mj)
        out = (wi * recursive_value(inst, s & ~arm_bit(i), choose, leaf, memo)
               + wj * recursive_value(inst, s & ~arm_bit(j), choose, leaf, memo))
    memo[s] = out
    return out


def q_one_above(mu_above: float, mu_below: Iterable[float]) -> float:
    """Probability of exploring every below arm with a single above arm.

    Each round must pick the below arm, which happens with probability
    ``|mu_i| / (|mu_i| + |mu_j|)``.
    """
    a = abs(mu_above)
    return math.prod(a / (a + abs(m)) for m in mu_below)


def q_one_below(mu_above: Iterable[float], mu_below: float) -> float:
    """Probability of exploring the single below arm before the above arms run out."""
    b = abs(mu_below)
    return 1.0 - math.prod(b / (abs(m) + b) for m in mu_above)


def q_one_above_literal(mu_above: float, mu_below: Iterable[float]) -> float:
    """The published product with numerator and denominator roles swapped.

    Kept only as a negative control; it disagrees with the recursion whenever
    the magnitudes differ.
    """
    a = abs(mu_above)
    return math.prod(abs(m) / (abs(m) + a) for m in mu_below)


def q_one_below_literal(mu_above: Iterable[float], mu_below: float) -> float:
    b = abs(mu_below)
    return 1.0 - math.prod(abs(m) / (abs(m) + b) for m in mu_above)
