"""Seeded random instance families for the checkers and property tests."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import DiscreteDistribution, Instance, stochastically_dominates


class Mode(str, Enum):
    DOMINANCE_CHAIN = "DominanceChain"
    UNRESTRICTED = "Unrestricted"
    TWO_POINT = "TwoPoint"
    ONE_ABOVE = "OneAbove"


@dataclass(frozen=True)
class InstanceGenerator:
    """Draws instances of one family. Same fields, same sequence of instances.

    Support values are drawn on a 0.01 grid from ``[value_lo, value_hi]``
    and every mean is kept at least ``min_abs_mean`` away from zero.
    ``two_point_h`` fixes the positive value of the TwoPoint family, whose
    negative value is always -1.
    """

    mode: Mode = Mode.UNRESTRICTED
    max_above: int = 4
    max_below: int = 4
    max_support: int = 4
    value_lo: float = -5.0
    value_hi: float = 5.0
    seed: int = 0
    min_above: int = 1
    min_below: int = 0
    min_abs_mean: float = 1e-3
    two_point_h: float = 3.0

    def instances(self, n: int) -> list[Instance]:
        rng = np.random.default_rng([self.seed, n])
        return [self._one(rng) for _ in range(n)]

    def _counts(self, rng) -> tuple[int, int]:
        if self.mode is Mode.ONE_ABOVE:
            return 1, int(rng.integers(max(1, self.min_below), self.max_below + 1))
        lo_b = max(self.min_below, 1 if self.mode is Mode.DOMINANCE_CHAIN else 0)
        while True:
            n_above = int(rng.integers(self.min_above, self.max_above + 1))
            n_below = int(rng.integers(lo_b, self.max_below + 1))
            if n_above + n_below > 0:
                return n_above, n_below

    def _support(self, rng) -> DiscreteDistribution:
        m = int(rng.integers(1, self.max_support + 1))
        vals = np.unique(np.round(rng.uniform(self.value_lo, self.value_hi, m), 2))
        probs = rng.dirichlet(np.ones(vals.size))
        probs = probs / math.fsum(probs)
        return DiscreteDistribution(tuple(float(v) for v in vals), tuple(float(p) for p in probs))

    def _signed(self, rng, sign: int) -> DiscreteDistribution:
        while True:
            d = self._support(rng)
            if sign * d.mean >= self.min_abs_mean:
                return d

    def _one(self, rng) -> Instance:
        n_above, n_below = self._counts(rng)
        if self.mode is Mode.TWO_POINT:
            arms = self._two_point(rng, n_above, n_below)
        else:
            arms = [self._signed(rng, +1) for _ in range(n_above)]
            if self.mode is Mode.DOMINANCE_CHAIN:
                arms += self._chain(rng, n_below)
            else:
                arms += [self._signed(rng, -1) for _ in range(n_below)]
        order = rng.permutation(len(arms))
        return Instance.from_distributions([arms[i] for i in order])

    def _chain(self, rng, n: int) -> list[DiscreteDistribution]:
        # Additive shifts of one base support preserve first-order dominance.
        while True:
            base = self._support(rng)
            top = -self.min_abs_mean - base.mean
            span = self.value_hi - self.value_lo
            shifts = np.round(top - rng.uniform(0.0, span / 2, n), 2)
            chain = [base.shifted(float(c)) for c in np.sort(shifts)[::-1]]
            if all(d.mean <= -self.min_abs_mean for d in chain) and all(
                    stochastically_dominates(a, b) for a, b in zip(chain, chain[1:])):
                return chain

    def _two_point(self, rng, n_above: int, n_below: int) -> list[DiscreteDistribution]:
        H = float(self.two_point_h)
        cut = 1.0 / (H + 1.0)  # Pr(X = H) at which the mean is 0
        out = []
        for sign, count in ((+1, n_above), (-1, max(1, n_below))):
            for _ in range(count):
                while True:
                    q = float(rng.uniform(cut, 1.0) if sign > 0 else rng.uniform(0.0, cut))
                    mean = H * q - (1.0 - q)
                    if 0.0 < q < 1.0 and sign * mean >= self.min_abs_mean:
                        break
                out.append(DiscreteDistribution((-1.0, H), (1.0 - q, q)))
        return out


def discretize_normal(mu: float, sigma: float, points: int = 21,
                      width: float = 3.0) -> DiscreteDistribution:
    """Equally spaced grid over ``mu +- width*sigma`` carrying the normal's bin masses.

    Bin edges sit halfway between grid points and the outer bins absorb the
    tails, so the masses sum to one.
    """
    grid = np.linspace(mu - width * sigma, mu + width * sigma, points)
    edges = (grid[:-1] + grid[1:]) / 2

    def cdf(z):
        return 0.5 * (1.0 + math.erf((z - mu) / (sigma * math.sqrt(2.0))))

    c = [0.0] + [cdf(e) for e in edges] + [1.0]
    probs = np.diff(c)
    probs = probs / math.fsum(probs)
    return DiscreteDistribution(tuple(float(v) for v in grid), tuple(float(p) for p in probs))
