"""Finite-horizon simulation of safe exploration followed by exploitation.

An episode draws one static realization per arm, then plays:

1. goal-MDP portfolios (lowest-index above arm mixed with the best-mean
   below arm) until some explored arm turns out positive or no safe mix
   remains;
2. after a positive discovery: singletons over the remaining above arms,
   then zero-expectation Bernoulli trials pairing the best known arm with
   each unexplored arm until it is revealed;
3. the best arm forever, or the safe arm forever if nothing positive was
   seen.

The ``segb-prime`` variant exploits as soon as a positive value appears and
prefers above arms by decreasing mean.

Seeding: episode ``e`` of a run with master seed ``m`` uses
``random.Random(episode_seed(m, e))``. :func:`episode_seed` is a splitmix64
finalizer applied twice, ``mix(mix(m) + (e + 1) * 0x9E3779B97F4A7C15)``
modulo 2**64; it is part of the public contract and must not change.
"""
from __future__ import annotations

import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .errors import BoundVacuous, HorizonZero, SafetyViolation
from .gmdp import STOP, ogp_action
from .model import (
    SAFE_ARM,
    SAFETY_TOL,
    Beliefs,
    Instance,
    Portfolio,
    arm_bit,
    members,
    pair_portfolio,
    portfolio_value,
    realized_pair_portfolio,
    sample_reward,
    singleton_portfolio,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Variant(str, Enum):
    SEGB = "segb"
    SEGB_PRIME = "segb-prime"


class TerminalMode(str, Enum):
    EXPLOIT_BEST = "ExploitBest"
    SAFE_ARM_FOREVER = "SafeArmForever"
    HORIZON_DURING_EXPLORATION = "HorizonDuringExploration"


class Phase(str, Enum):
    GMDP = "gmdp"
    EXPLORE_ABOVE = "explore-above"
    BERNOULLI = "bernoulli"
    EXPLOIT = "exploit"
    SAFE = "safe"


@dataclass(frozen=True)
class RoundLog:
    t: int
    portfolio: Portfolio
    realized_arm: int
    newly_explored: int | None
    reward: float
    safety_margin: float
    phase: Phase


@dataclass
class EpisodeResult:
    """Trace and totals of one episode.

    ``rounds`` is empty when the episode ran without tracing; the totals are
    filled either way.
    """

    utility: float
    exploration_rounds: int
    terminal_mode: TerminalMode
    realization: tuple[float, ...]
    violations: int = 0
    min_margin: float = math.inf
    rounds: list[RoundLog] = field(default_factory=list)


@dataclass(frozen=True)
class DeltaGamma:
    delta1: float | None
    delta2: float | None
    delta: float | None
    gamma: float


@dataclass(frozen=True)
class MonteCarloSummary:
    T: int
    episodes: int
    mean: float
    std_error: float
    mean_exploration_rounds: float
    violations: int
    min_margin: float


def splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def episode_seed(master_seed: int, episode: int) -> int:
    h = splitmix64(master_seed & _MASK64)
    return splitmix64((h + (episode + 1) * _GOLDEN) & _MASK64)


def episode_rng(master_seed: int, episode: int) -> random.Random:
    return random.Random(episode_seed(master_seed, episode))


def draw_realization(inst: Instance, rng) -> tuple[float, ...]:
    return tuple(sample_reward(d, rng) for d in inst.distributions)


def gamma_of(inst: Instance) -> float:
    below = inst.below_arms
    return max(abs(inst.mu(j)) for j in below) if below else 0.0


def realized_delta_gamma(inst: Instance, realization) -> DeltaGamma:
    pos_below = [realization[j - 1] for j in inst.below_arms if realization[j - 1] > 0]
    pos_above = [realization[i - 1] for i in inst.above_arms if realization[i - 1] > 0]
    d1 = min(pos_below) if pos_below else None
    d2 = max(pos_above) if pos_above else None
    present = [d for d in (d1, d2) if d is not None]
    return DeltaGamma(d1, d2, max(present) if present else None, gamma_of(inst))


def _prime_action(inst: Instance, s: int):
    """OGP with the above arm chosen by decreasing mean (ties: lowest index)."""
    act = ogp_action(inst, s)
    if act is STOP:
        return act
    above = members(s & inst.above_mask)
    i = min(above, key=lambda a: (-inst.mu(a), a))
    return type(act)(act.kind, i, i if act.kind == "single" else act.j)


def run_segb_episode(inst: Instance, realization, T: int, rng,
                     variant: Variant | str = Variant.SEGB, *, trace: bool = True,
                     strict: bool = True, tol: float = SAFETY_TOL) -> EpisodeResult:
    """Play one episode of length ``T`` against a fixed realization.

    ``rng`` drives Nature's coin flips over portfolios. Round rewards are
    Bayesian expectations of the played portfolio given what is known at
    play time. Exploitation and safe-arm tails are accounted in bulk when
    ``trace`` is false.

    Raises:
        HorizonZero: ``T < 1``.
        SafetyViolation: a played portfolio had expectation below ``-tol``
            (only when ``strict``; otherwise counted in ``violations``).
    """
    if T < 1:
        raise HorizonZero("horizon must be at least 1")
    variant = Variant(variant)
    x = tuple(realization)
    beliefs = Beliefs(inst)
    rewards: list[float] = []
    logs: list[RoundLog] = []
    state = {"t": 0, "violations": 0, "min_margin": math.inf}

    def play(p: Portfolio, phase: Phase, target: int | None = None) -> int:
        margin = portfolio_value(p, beliefs)
        if margin < -tol:
            state["violations"] += 1
        state["min_margin"] = min(state["min_margin"], margin)
        arm = p.sample(rng)
        newly = None
        if arm != SAFE_ARM and not beliefs.is_known(arm):
            beliefs.reveal(arm, x[arm - 1])
            newly = arm
        state["t"] += 1
        rewards.append(margin)
        if trace:
            logs.append(RoundLog(state["t"], p, arm, newly, margin, margin, phase))
        return arm

    def tail(p: Portfolio, phase: Phase, arm: int) -> None:
        left = T - state["t"]
        if left <= 0:
            return
        margin = portfolio_value(p, beliefs)
        if margin < -tol:
            state["violations"] += left
        state["min_margin"] = min(state["min_margin"], margin)
        if trace:
            for t in range(state["t"] + 1, T + 1):
                logs.append(RoundLog(t, p, arm, None, margin, margin, phase))
            rewards.extend([margin] * left)
        else:
            rewards.append(margin * left)
        state["t"] = T

    def finish(mode: TerminalMode, explore_rounds: int) -> EpisodeResult:
        if strict and state["violations"]:
            raise SafetyViolation(f"{state['violations']} unsafe rounds")
        return EpisodeResult(math.fsum(rewards), explore_rounds, mode, x,
                             state["violations"], state["min_margin"], logs)

    def horizon_hit() -> bool:
        return state["t"] >= T

    choose = ogp_action if variant is Variant.SEGB else _prime_action
    s = inst.full
    found = False
    while not horizon_hit():
        act = choose(inst, s)
        if act is STOP:
            break
        if act.kind == "single":
            p = singleton_portfolio(act.i)
        else:
            p = pair_portfolio(inst.mu(act.i), inst.mu(act.j), act.i, act.j)
        arm = play(p, Phase.GMDP)
        s &= ~arm_bit(arm)
        if x[arm - 1] > 0:
            found = True
            break

    if not found:
        if horizon_hit() and choose(inst, s) is not STOP:
            return finish(TerminalMode.HORIZON_DURING_EXPLORATION, T)
        explored = state["t"]
        tail(singleton_portfolio(SAFE_ARM), Phase.SAFE, SAFE_ARM)
        return finish(TerminalMode.SAFE_ARM_FOREVER, explored)

    def best_known() -> int:
        known = beliefs.known()
        return max(sorted(known), key=lambda a: known[a])

    if variant is Variant.SEGB:
        for i in inst.above_arms:
            if beliefs.is_known(i):
                continue
            if horizon_hit():
                return finish(TerminalMode.HORIZON_DURING_EXPLORATION, T)
            play(singleton_portfolio(i), Phase.EXPLORE_ABOVE)
        for j in range(1, inst.k + 1):
            while not beliefs.is_known(j):
                if horizon_hit():
                    return finish(TerminalMode.HORIZON_DURING_EXPLORATION, T)
                b = best_known()
                play(realized_pair_portfolio(x[b - 1], inst.mu(j), b, j), Phase.BERNOULLI)

    explored = state["t"]
    b = best_known()
    tail(singleton_portfolio(b), Phase.EXPLOIT, b)
    return finish(TerminalMode.EXPLOIT_BEST, explored)


def _episode_stats(args):
    inst, T, variant, master_seed, lo, hi = args
    out = []
    for e in range(lo, hi):
        rng = episode_rng(master_seed, e)
        x = draw_realization(inst, rng)
        r = run_segb_episode(inst, x, T, rng, variant, trace=False, strict=False)
        out.append((r.utility, r.exploration_rounds, r.violations, r.min_margin))
    return out


def simulate_episodes(inst: Instance, T: int, episodes: int, master_seed: int,
                      variant: Variant | str = Variant.SEGB, threads: int = 1):
    """Per-episode ``(utility, exploration_rounds, violations, min_margin)``, in episode order."""
    if T < 1:
        raise HorizonZero("horizon must be at least 1")
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    variant = Variant(variant)
    threads = max(1, int(threads))
    if threads == 1:
        return _episode_stats((inst, T, variant, master_seed, 0, episodes))
    n_chunks = threads * 4
    bounds = [episodes * c // n_chunks for c in range(n_chunks + 1)]
    jobs = [(inst, T, variant, master_seed, lo, hi)
            for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_episode_stats, jobs))
    return [row for part in parts for row in part]


def summarize(T: int, rows) -> MonteCarloSummary:
    """Order-independent reduction: exact sums via ``math.fsum``."""
    n = len(rows)
    utils = [r[0] for r in rows]
    mean = math.fsum(utils) / n
    if n > 1:
        var = math.fsum((u - mean) ** 2 for u in utils) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return MonteCarloSummary(
        T=T, episodes=n, mean=mean, std_error=se,
        mean_exploration_rounds=math.fsum(r[1] for r in rows) / n,
        violations=sum(r[2] for r in rows),
        min_margin=min(r[3] for r in rows),
    )


def monte_carlo_utility(inst: Instance, T: int, episodes: int, master_seed: int,
                        variant: Variant | str = Variant.SEGB,
                        threads: int = 1) -> MonteCarloSummary:
    """Estimate the expected cumulative utility over ``episodes`` seeded runs."""
    return summarize(T, simulate_episodes(inst, T, episodes, master_seed, variant, threads))


def exploration_budget(inst: Instance, delta_lower: float) -> float:
    """``K * (1 + gamma / delta)``: expected exploration rounds bound."""
    return inst.k * (1.0 + gamma_of(inst) / delta_lower)


def convergence_floor(inst: Instance, T: int, delta_lower: float, w_star: float) -> float:
    """``(T - K(1 + gamma/delta)) * w_star``, a lower bound on expected utility."""
    if not delta_lower > 0:
        raise ValueError("delta_lower must be positive")
    budget = exploration_budget(inst, delta_lower)
    if T <= budget:
        raise BoundVacuous(f"T={T} does not exceed K(1+gamma/delta)={budget}")
    return (T - budget) * w_star


def min_positive_support(inst: Instance) -> float | None:
    pos = [v for d in inst.distributions for v in d.values if v > 0]
    return min(pos) if pos else None


def max_support(inst: Instance) -> float:
    return max(d.values[-1] for d in inst.distributions)
