"""Arms, reward priors, instances, portfolios and the Bayesian-safety predicate.

Arms are indexed ``1..K``; index ``0`` is the safe arm whose reward is
always 0. A set of unexplored arms is a plain ``int`` bitmask in which arm
``i`` occupies bit ``i - 1``, so the full state of a K-arm instance is
``(1 << K) - 1`` and the safe arm is never a member.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    EmptySupport,
    InvalidSupport,
    ProbabilitiesDontSum,
    SignViolation,
    TooManyArms,
    ValidationError,
    ZeroMeanArm,
)

PROB_SUM_TOL = 1e-12
EPSILON_ZERO_MEAN = 1e-9
SAFETY_TOL = 1e-9
MAX_ARMS = 20
SAFE_ARM = 0

StateSet = int


def arm_bit(i: int) -> int:
    return 1 << (i - 1)


def full_state(k: int) -> StateSet:
    return (1 << k) - 1


def members(s: StateSet) -> list[int]:
    """Arm indices contained in ``s``, ascending."""
    out = []
    i = 1
    while s:
        if s & 1:
            out.append(i)
        s >>= 1
        i += 1
    return out


def state_of(arms: Iterable[int]) -> StateSet:
    s = 0
    for i in arms:
        s |= arm_bit(i)
    return s


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support reward prior of a single arm.

    ``values`` are strictly increasing and every probability is positive.
    Build through :meth:`from_pairs` to get sorting and validation of raw
    input.
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.values) == 0:
            raise EmptySupport("distribution has an empty support")
        if len(self.values) != len(self.probs):
            raise InvalidSupport("values and probabilities differ in length")
        for v, p in zip(self.values, self.probs):
            if not (math.isfinite(v) and math.isfinite(p)):
                raise InvalidSupport(f"non-finite support entry ({v}, {p})")
            if not 0.0 < p <= 1.0:
                raise InvalidSupport(f"probability {p} outside (0, 1]")
        for a, b in zip(self.values, self.values[1:]):
            if not a < b:
                raise InvalidSupport("support values must be strictly increasing and distinct")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ProbabilitiesDontSum(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "_cum", tuple(accumulate(self.probs)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[Any]]) -> "DiscreteDistribution":
        """Build from ``(value, probability)`` pairs in any order.

        Entries may be numbers or decimal strings.
        """
        parsed = []
        for pair in pairs:
            if len(pair) != 2:
                raise InvalidSupport(f"support entry {pair!r} is not a (value, prob) pair")
            try:
                parsed.append((float(pair[0]), float(pair[1])))
            except (TypeError, ValueError) as exc:
                raise InvalidSupport(f"cannot parse support entry {pair!r}") from exc
        if not parsed:
            raise EmptySupport("distribution has an empty support")
        parsed.sort(key=lambda vp: vp[0])
        return cls(tuple(v for v, _ in parsed), tuple(p for _, p in parsed))

    @classmethod
    def point_mass(cls, value: float) -> "DiscreteDistribution":
        return cls((float(value),), (1.0,))

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def support(self) -> list[tuple[float, float]]:
        return list(zip(self.values, self.probs))

    def cdf(self, x: float) -> float:
        """``Pr(X <= x)``."""
        k = bisect_right(self.values, x)
        return self._cum[k - 1] if k else 0.0

    def prob_at_least(self, x: float) -> float:
        """``Pr(X >= x)``, summed directly to avoid ``1 - cdf`` cancellation."""
        return math.fsum(p for v, p in zip(self.values, self.probs) if v >= x)

    def prob_positive(self) -> float:
        return math.fsum(p for v, p in zip(self.values, self.probs) if v > 0)

    def shifted(self, c: float) -> "DiscreteDistribution":
        return DiscreteDistribution(tuple(v + c for v in self.values), self.probs)

    def to_json(self) -> dict:
        return {"support": [[repr(v), repr(p)] for v, p in self.support]}


@dataclass(frozen=True)
class Instance:
    """The tuple (K, arms, priors, means) plus the implicit safe arm of value 0.

    ``distributions[i - 1]`` is the prior of arm ``i``. Use
    :func:`validate_instance` or :meth:`from_distributions` to construct.
    """

    distributions: tuple[DiscreteDistribution, ...]
    means: tuple[float, ...]
    safe_value: float = 0.0

    @classmethod
    def from_distributions(cls, dists: Sequence[DiscreteDistribution]) -> "Instance":
        dists = tuple(dists)
        if not dists:
            raise ValidationError("an instance needs at least one arm")
        if len(dists) > MAX_ARMS:
            raise TooManyArms(f"{len(dists)} arms exceeds the cap of {MAX_ARMS}")
        means = tuple(d.mean for d in dists)
        for i, mu in enumerate(means, start=1):
            if abs(mu) < EPSILON_ZERO_MEAN:
                raise ZeroMeanArm(f"arm {i} has mean {mu!r}; zero-mean arms are not allowed")
        return cls(dists, means)

    @property
    def k(self) -> int:
        return len(self.distributions)

    @property
    def full(self) -> StateSet:
        return full_state(self.k)

    def mu(self, i: int) -> float:
        """Prior mean of arm ``i``; the safe arm has mean 0."""
        return 0.0 if i == SAFE_ARM else self.means[i - 1]

    def dist(self, i: int) -> DiscreteDistribution:
        return self.distributions[i - 1]

    @property
    def above_mask(self) -> StateSet:
        return state_of(i for i in range(1, self.k + 1) if self.means[i - 1] > 0)

    @property
    def below_mask(self) -> StateSet:
        return state_of(i for i in range(1, self.k + 1) if self.means[i - 1] < 0)

    @property
    def above_arms(self) -> list[int]:
        return members(self.above_mask)

    @property
    def below_arms(self) -> list[int]:
        return members(self.below_mask)

    @property
    def metadata(self) -> dict:
        return {"K": self.k, "above": len(self.above_arms), "below": len(self.below_arms)}

    def to_json(self) -> dict:
        return {"arms": [d.to_json() for d in self.distributions]}


def validate_instance(raw: Mapping[str, Any] | Sequence[Any]) -> Instance:
    """Validate a raw instance description.

    Accepts ``{"arms": [{"support": [[value, prob], ...]}, ...]}`` or the
    bare list of arms. Values may be numbers or decimal strings.

    Raises:
        EmptySupport, ProbabilitiesDontSum, InvalidSupport, ZeroMeanArm,
        TooManyArms: the description breaks a model constraint.
    """
    arms = raw.get("arms") if isinstance(raw, Mapping) else raw
    if not isinstance(arms, Sequence) or isinstance(arms, (str, bytes)):
        raise ValidationError("instance must provide a list under 'arms'")
    if len(arms) > MAX_ARMS:
        raise TooManyArms(f"{len(arms)} arms exceeds the cap of {MAX_ARMS}")
    dists = []
    for idx, arm in enumerate(arms, start=1):
        support = arm.get("support") if isinstance(arm, Mapping) else arm
        if support is None:
            raise ValidationError(f"arm {idx} has no 'support'")
        try:
            dists.append(DiscreteDistribution.from_pairs(support))
        except ValidationError as exc:
            raise type(exc)(f"arm {idx}: {exc}") from exc
    return Instance.from_distributions(dists)


def load_instance(path: str | Path) -> Instance:
    with open(path) as fh:
        raw = json.load(fh)
    return validate_instance(raw)


def stochastically_dominates(d1: DiscreteDistribution, d2: DiscreteDistribution,
                             tol: float = 1e-12) -> bool:
    """First-order dominance: ``Pr(d1 >= x) >= Pr(d2 >= x)`` for every x.

    Both survival functions are step functions that only change at support
    points, so checking the union of supports is sufficient.
    """
    for x in sorted(set(d1.values) | set(d2.values)):
        if d1.prob_at_least(x) < d2.prob_at_least(x) - tol:
            return False
    return True


def partition(inst: Instance, s: StateSet) -> tuple[StateSet, StateSet]:
    """Split ``s`` into its positive-mean and negative-mean members."""
    return s & inst.above_mask, s & inst.below_mask


@dataclass(frozen=True)
class Portfolio:
    """A distribution over ``0..K`` (0 is the safe arm), stored sparsely."""

    weights: tuple[tuple[int, float], ...]

    def __post_init__(self):
        total = math.fsum(w for _, w in self.weights)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"portfolio weights sum to {total!r}")
        for a, w in self.weights:
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight {w} for arm {a} outside [0, 1]")

    @classmethod
    def of(cls, mapping: Mapping[int, float]) -> "Portfolio":
        return cls(tuple(sorted((int(a), float(w)) for a, w in mapping.items() if w > 0.0)))

    def weight(self, arm: int) -> float:
        for a, w in self.weights:
            if a == arm:
                return w
        return 0.0

    def as_dict(self) -> dict[int, float]:
        return dict(self.weights)

    def sample(self, rng) -> int:
        """Draw one arm by inverse CDF over ascending arm index."""
        u = rng.random()
        acc = 0.0
        for a, w in self.weights:
            acc += w
            if u < acc:
                return a
        return self.weights[-1][0]

    def format(self) -> str:
        return ";".join(f"{a}:{w!r}" for a, w in self.weights)


def pair_portfolio(mu_i: float, mu_j: float, i: int, j: int) -> Portfolio:
    """Mix an above arm ``i`` with a below arm ``j`` at zero prior expectation.

    This is the safe two-arm mix that puts the most weight on ``j``.
    """
    if not mu_i > 0 or not mu_j < 0:
        raise SignViolation(f"need mu_i > 0 > mu_j, got {mu_i}, {mu_j}")
    if i == j:
        raise SignViolation("pair portfolio needs two distinct arms")
    gap = mu_i - mu_j
    return Portfolio.of({i: -mu_j / gap, j: mu_i / gap})


def realized_pair_portfolio(x_i: float, mu_j: float, i: int, j: int) -> Portfolio:
    """Same mix as :func:`pair_portfolio`, with arm ``i``'s realized value."""
    if not x_i > 0 or not mu_j < 0:
        raise SignViolation(f"need x_i > 0 > mu_j, got {x_i}, {mu_j}")
    return pair_portfolio(x_i, mu_j, i, j)


def singleton_portfolio(i: int) -> Portfolio:
    return Portfolio(((i, 1.0),))


class Beliefs:
    """Per-arm conditional expectations: prior mean until the arm is explored.

    Episode-local and single-writer. Revealed values never revert.
    """

    def __init__(self, inst: Instance):
        self._means = inst.means
        self._known: dict[int, float] = {}

    def reveal(self, arm: int, x: float) -> None:
        prev = self._known.get(arm)
        if prev is not None and prev != x:
            raise ValueError(f"arm {arm} already known as {prev}, cannot become {x}")
        self._known[arm] = x

    def is_known(self, arm: int) -> bool:
        return arm in self._known

    def known(self) -> dict[int, float]:
        return dict(self._known)

    def value(self, arm: int) -> float:
        if arm == SAFE_ARM:
            return 0.0
        x = self._known.get(arm)
        return self._means[arm - 1] if x is None else x


def portfolio_value(p: Portfolio, b: Beliefs) -> float:
    """Bayesian expected reward of ``p`` under the current beliefs."""
    return math.fsum(w * b.value(a) for a, w in p.weights)


def is_safe(p: Portfolio, b: Beliefs, tol: float = SAFETY_TOL) -> bool:
    return portfolio_value(p, b) >= -tol


def sample_reward(d: DiscreteDistribution, rng) -> float:
    """Realize one draw: the first support point whose cumulative mass exceeds u."""
    u = rng.random()
    k = bisect_right(d._cum, u)
    return d.values[min(k, len(d.values) - 1)]
