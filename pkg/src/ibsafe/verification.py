"""Executable checks of the structural results, each returning a :class:`CheckReport`.

Every checker is deterministic in its arguments, and each has a broken
configuration (``corrupt``, ``reverse_right``, ``ascending``, ``literal``
...) that must produce ``passed=False``.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from itertools import permutations
from typing import Any, Iterable, Sequence

import numpy as np

from . import gmdp
from .errors import EpsilonOutOfRange, GeneratorModeMismatch, NotTwoPoint
from .generators import InstanceGenerator, Mode
from .model import DiscreteDistribution, Instance, arm_bit, members, stochastically_dominates
from .oracles import (
    brute_force_terminal_reward,
    q_one_above,
    q_one_above_literal,
    q_one_below,
    q_one_below_literal,
)
from .segb import (
    Variant,
    exploration_budget,
    max_support,
    min_positive_support,
    monte_carlo_utility,
    simulate_episodes,
    summarize,
)

ORDERED_POLICY_CAP = 5000


@dataclass
class CheckReport:
    check_name: str
    passed: bool
    max_deviation: float
    tolerance: float
    trials: int
    elapsed_ms: int
    witness: dict[str, Any] | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CheckReport":
        return cls(**d)


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = int(round((time.perf_counter() - self.t0) * 1000))


def _report(name, dev, tol, trials, timer, witness=None, **details) -> CheckReport:
    dev = float(dev)
    return CheckReport(name, bool(dev <= tol), dev, float(tol), int(trials), timer.ms,
                       witness, details)


def _describe(inst: Instance) -> dict:
    return {"means": list(inst.means), "arms": inst.to_json()["arms"]}


def ordered_specs(inst: Instance, cap: int = ORDERED_POLICY_CAP):
    """All ordered policies, or ``None`` when there are more than ``cap``."""
    n = math.factorial(len(inst.above_arms)) * math.factorial(len(inst.below_arms))
    if n > cap:
        return None
    return list(gmdp.enumerate_ordered_specs(inst))


def _damped_reach(inst: Instance, pol: gmdp.PolicyTable, damp: float) -> np.ndarray:
    """Reach probabilities when every pair puts only ``damp`` times the safe
    maximum on its below arm. Still safe, but not a P-valid mix."""
    q = np.zeros(1 << inst.k)
    q[0] = 1.0
    for layer in gmdp._layers(inst.k)[1:]:
        for s in layer:
            s = int(s)
            a = pol.action(s)
            if a.kind == "stop":
                continue
            if a.kind == "single":
                q[s] = q[s & ~arm_bit(a.i)]
                continue
            mi, mj = inst.mu(a.i), inst.mu(a.j)
            wj = damp * mi / (mi - mj)
            q[s] = (1 - wj) * q[s & ~arm_bit(a.i)] + wj * q[s & ~arm_bit(a.j)]
    return q


def check_equivalence_lemma(gen: InstanceGenerator, instances: int = 100,
                            policies_per_instance: int = 20, tol: float = 1e-9,
                            corrupt: bool = False) -> CheckReport:
    """Reach probability of the empty state is the same for all P-valid policies.

    Per instance: every ordered policy (when at most 5000) plus
    ``policies_per_instance`` uniformly random P-valid policies. The
    deviation is the largest spread ``max_pi Q - min_pi Q`` over states,
    which equals the largest pairwise difference. ``corrupt`` swaps one
    policy for a safe but under-exploring mix.
    """
    with _Timer() as timer:
        worst, witness, n_pol = 0.0, None, 0
        rng = np.random.default_rng([gen.seed, 1])
        for n, inst in enumerate(gen.instances(instances)):
            pols = [gmdp.ordered_policy(inst, sp) for sp in (ordered_specs(inst) or [])]
            pols += [gmdp.sample_pvalid_policy(inst, rng) for _ in range(policies_per_instance)]
            qs = np.array([gmdp.reach_table(inst, p) for p in pols])
            if corrupt:
                qs[-1] = _damped_reach(inst, pols[-1], 0.5)
            n_pol += len(pols)
            spread = qs.max(axis=0) - qs.min(axis=0)
            s = int(np.argmax(spread))
            if spread[s] > worst:
                worst = float(spread[s])
                witness = {"instance_index": n, "state": s,
                           "policies": [int(np.argmax(qs[:, s])), int(np.argmin(qs[:, s]))],
                           "q_max": float(qs[:, s].max()), "q_min": float(qs[:, s].min()),
                           "instance": _describe(inst)}
    return _report("lemma1", worst, tol, n_pol, timer, witness, instances=instances,
                   corrupt=corrupt)


def _ogp_deviation(insts: Sequence[Instance], reverse_right: bool):
    worst, witness = 0.0, None
    for n, inst in enumerate(insts):
        W, _ = gmdp.solve_optimal(inst)
        spec = gmdp.ogp_spec(inst)
        if reverse_right:
            spec = gmdp.OrderedPolicySpec(spec.left, spec.right[::-1])
        w = gmdp.evaluate_policy(inst, gmdp.ordered_policy(inst, spec))
        dev = np.abs(w - W)
        s = int(np.argmax(dev))
        if dev[s] > worst or witness is None:
            worst = max(worst, float(dev[s]))
            witness = {"instance_index": n, "state": s, "w_star": float(W[s]),
                       "w_policy": float(w[s]), "instance": _describe(inst)}
    return worst, witness


def check_ogp_optimality(gen: InstanceGenerator, instances: int = 100, tol: float = 1e-9,
                         reverse_right: bool = False) -> CheckReport:
    """OGP attains ``W*`` at every state when below arms form a dominance chain."""
    if gen.mode is not Mode.DOMINANCE_CHAIN:
        raise GeneratorModeMismatch("OGP optimality needs a DominanceChain generator")
    with _Timer() as timer:
        worst, witness = _ogp_deviation(gen.instances(instances), reverse_right)
    return _report("thm2", worst, tol, instances, timer, witness, reverse_right=reverse_right)


def ogp_negative_control(epsilon: float = 0.1, tol: float = 1e-9) -> CheckReport:
    """OGP with its below-arm order reversed, on the three-arm counterexample. Must fail."""
    with _Timer() as timer:
        worst, witness = _ogp_deviation([claim3_instance(epsilon)], reverse_right=True)
    return _report("thm2-reversed-control", worst, tol, 1, timer, witness, epsilon=epsilon)


def check_index_policy(gen: InstanceGenerator, instances: int = 100, tol: float = 1e-9,
                       ascending: bool = False) -> CheckReport:
    """Ordering below arms by decreasing f* attains ``W*`` from the full state."""
    if gen.mode is not Mode.ONE_ABOVE:
        raise GeneratorModeMismatch("index policy check needs a OneAbove generator")
    with _Timer() as timer:
        worst, witness, failures = 0.0, None, 0
        for n, inst in enumerate(gen.instances(instances)):
            W, _ = gmdp.solve_optimal(inst)
            w = gmdp.evaluate_policy(inst, gmdp.index_policy(inst, descending=not ascending))
            dev = abs(W[inst.full] - w[inst.full])
            failures += dev > tol
            if dev > worst or witness is None:
                worst = max(worst, dev)
                witness = {"instance_index": n, "w_star": float(W[inst.full]),
                           "w_index": float(w[inst.full]),
                           "index": {str(j): gmdp.fstar_index(inst, inst.full, j)
                                     for j in inst.below_arms},
                           "instance": _describe(inst)}
    return _report("prop8", worst, tol, instances, timer, witness, ascending=ascending,
                   failing_instances=int(failures))


def two_point_h(inst: Instance) -> float:
    """The positive support value shared by a {-1, H} instance.

    Raises:
        NotTwoPoint: some arm has support outside ``{-1, H}``.
    """
    vals = {v for d in inst.distributions for v in d.values}
    pos = [v for v in vals if v > 0]
    if len(pos) != 1 or not vals <= {-1.0, pos[0]}:
        raise NotTwoPoint(f"supports {sorted(vals)} are not contained in {{-1, H}}")
    return pos[0]


def check_two_point_discovery(inst: Instance, tol: float = 1e-12,
                              corrupt: bool = False) -> CheckReport:
    """Every above/below pair mix discovers H with probability ``1/(H+1)``.

    ``corrupt`` replaces the zero-expectation mix with a 50/50 mix.
    """
    H = two_point_h(inst)
    with _Timer() as timer:
        target = 1.0 / (H + 1.0)
        worst, witness, n = 0.0, None, 0
        for i in inst.above_arms:
            for j in inst.below_arms:
                if corrupt:
                    wi = wj = 0.5
                else:
                    p = gmdp.Action.pair(i, j)
                    mi, mj = inst.mu(p.i), inst.mu(p.j)
                    wi, wj = -mj / (mi - mj), mi / (mi - mj)
                disc = wi * inst.dist(i).prob_positive() + wj * inst.dist(j).prob_positive()
                n += 1
                if abs(disc - target) >= worst:
                    worst = abs(disc - target)
                    witness = {"pair": [i, j], "discovery": disc, "target": target}
    return _report("prop1", worst, tol, n, timer, witness, H=H, corrupt=corrupt)


def check_two_point_suite(hs: Iterable[float] = (1, 2, 3, 9), instances_per_h: int = 25,
                          seed: int = 0, tol: float = 1e-12, corrupt: bool = False) -> CheckReport:
    with _Timer() as timer:
        worst, witness, n = 0.0, None, 0
        for H in hs:
            gen = InstanceGenerator(Mode.TWO_POINT, max_above=4, max_below=4, seed=seed,
                                    two_point_h=float(H))
            for inst in gen.instances(instances_per_h):
                r = check_two_point_discovery(inst, tol, corrupt)
                n += r.trials
                if r.max_deviation >= worst:
                    worst, witness = r.max_deviation, dict(r.witness or {}, H=H)
    return _report("prop1", worst, tol, n, timer, witness, hs=list(hs), corrupt=corrupt)


def claim3_instance(epsilon: float, x3_low: float | None = None) -> Instance:
    """Three arms where dominance among below arms does not order ``W*``.

    ``x3_low`` overrides arm 3's negative value (default ``-10**(1/eps)``).
    """
    low = -(10.0 ** (1.0 / epsilon)) if x3_low is None else x3_low
    return Instance.from_distributions([
        DiscreteDistribution((-1.0, 1.0), (0.45, 0.55)),
        DiscreteDistribution((-1e6 - 2 * epsilon, 1e6), (0.5, 0.5)),
        DiscreteDistribution((low, 1e6), (0.5, 0.5)),
    ])


def check_claim3_counterexample(epsilon: float = 0.1, min_gap: float = 1e5,
                                x3_low: float | None = None) -> CheckReport:
    """Arm 2 dominates arm 3, yet exploring arm 3 leaves more value than exploring arm 2.

    Deviation is ``min_gap - (W*(A minus a3) - W*(A minus a2))``; the check
    passes when it is at most 0 and dominance holds.
    """
    if not 0 < epsilon < 1 / 7:
        raise EpsilonOutOfRange(f"epsilon={epsilon} outside (0, 1/7)")
    if x3_low is None and 1.0 / epsilon >= 308:
        raise EpsilonOutOfRange(f"epsilon={epsilon}: 10**(1/epsilon) overflows a double")
    with _Timer() as timer:
        inst = claim3_instance(epsilon, x3_low)
        dominance = stochastically_dominates(inst.dist(2), inst.dist(3))
        W, _ = gmdp.solve_optimal(inst)
        finite = bool(np.all(np.isfinite(W)))
        after_a2 = float(W[inst.full & ~arm_bit(2)])
        after_a3 = float(W[inst.full & ~arm_bit(3)])
        gap = after_a3 - after_a2
        dev = (min_gap - gap) if (dominance and finite) else math.inf
    witness = {"W*(A-a2)": after_a2, "W*(A-a3)": after_a3, "gap": gap,
               "strict": after_a2 < after_a3, "dominance": dominance, "finite": finite,
               "means": list(inst.means)}
    return _report("claim3", dev, 0.0, 1, timer, witness, epsilon=epsilon, min_gap=min_gap)


def _base_case_expected(inst: Instance, s: int, literal: bool) -> float | None:
    above, below = members(s & inst.above_mask), members(s & inst.below_mask)
    mu = inst.mu
    if s == 0:
        return 1.0
    if not above:
        return 0.0
    one_above = q_one_above_literal if literal else q_one_above
    one_below = q_one_below_literal if literal else q_one_below
    if len(above) == 1:
        return one_above(mu(above[0]), [mu(j) for j in below])
    if len(below) == 1:
        return one_below([mu(i) for i in above], mu(below[0]))
    if not below:
        return 1.0
    return None


def check_base_case_q_forms(gen: InstanceGenerator, instances: int = 100, tol: float = 1e-12,
                            literal: bool = False) -> CheckReport:
    """Reach probabilities equal closed-form products wherever one side has one arm.

    Compared at every state with ``|above(s)| <= 1`` or ``|below(s)| <= 1``,
    for every ordered policy (or 20 random P-valid ones beyond the cap).
    ``literal`` uses the published products with swapped roles.
    """
    with _Timer() as timer:
        worst, witness, n_cmp = 0.0, None, 0
        rng = np.random.default_rng([gen.seed, 3])
        for n, inst in enumerate(gen.instances(instances)):
            specs = ordered_specs(inst)
            pols = ([gmdp.ordered_policy(inst, sp) for sp in specs] if specs is not None
                    else [gmdp.sample_pvalid_policy(inst, rng) for _ in range(20)])
            cases = [(s, e) for s in range(1 << inst.k)
                     if (e := _base_case_expected(inst, s, literal)) is not None]
            states = np.array([s for s, _ in cases])
            expect = np.array([e for _, e in cases])
            for p in pols:
                q = gmdp.reach_table(inst, p)[states]
                dev = np.abs(q - expect)
                n_cmp += dev.size
                m = int(np.argmax(dev))
                if dev[m] > worst:
                    worst = float(dev[m])
                    witness = {"instance_index": n, "state": int(states[m]), "q": float(q[m]),
                               "closed_form": float(expect[m]), "instance": _describe(inst)}
    return _report("qforms", worst, tol, n_cmp, timer, witness, literal=literal)


def check_terminal_reward_oracle(gen: InstanceGenerator, instances: int = 200,
                                 tol: float = 1e-12) -> CheckReport:
    """Factorized terminal reward vs. enumeration of the joint outcome space."""
    with _Timer() as timer:
        worst, witness, n_cmp = 0.0, None, 0
        for n, inst in enumerate(gen.instances(instances)):
            table = gmdp._terminal_rewards_for(inst, np.arange(1 << inst.k, dtype=np.int64))
            for e in range(1 << inst.k):
                dev = abs(table[e] - brute_force_terminal_reward(inst, e))
                n_cmp += 1
                if dev > worst:
                    worst = dev
                    witness = {"instance_index": n, "explored": e, "instance": _describe(inst)}
    return _report("terminal", worst, tol, n_cmp, timer, witness)


def check_convergence(inst: Instance, T: int = 2000, episodes: int = 20000, seed: int = 0,
                      variant: Variant | str = Variant.SEGB, threads: int = 1) -> CheckReport:
    """Monte Carlo utility against the exploration-budget floor and the W* limit.

    With ``B = K(1 + gamma/delta_min)`` and ``SE`` the standard error of the
    mean utility ``U``, requires ``(T - B) W* - 3 SE <= U`` and
    ``|U/T - W*| <= B V_max / T + 3 SE / T``, and no unsafe round. The
    deviation is the larger constraint excess (infinite after any unsafe
    round); it must be at most 0.
    """
    with _Timer() as timer:
        W, _ = gmdp.solve_optimal(inst)
        w_star = float(W[inst.full])
        delta_min = min_positive_support(inst)
        if delta_min is None:
            raise ValueError("instance has no positive support value")
        budget = exploration_budget(inst, delta_min)
        mc = monte_carlo_utility(inst, T, episodes, seed, variant, threads)
        floor = (T - budget) * w_star
        lower_excess = (floor - 3 * mc.std_error) - mc.mean
        band = budget * max_support(inst) / T + 3 * mc.std_error / T
        rate_excess = abs(mc.mean / T - w_star) - band
        dev = max(lower_excess, rate_excess) if mc.violations == 0 else math.inf
    witness = {"mean_utility": mc.mean, "std_error": mc.std_error, "w_star": w_star,
               "floor": floor, "band": band, "per_round": mc.mean / T,
               "violations": mc.violations, "min_margin": mc.min_margin,
               "mean_exploration_rounds": mc.mean_exploration_rounds, "budget": budget}
    return _report("prop2", dev, 0.0, episodes, timer, witness, T=T, seed=seed)


def check_safety(insts: Sequence[Instance], T: int = 200, episodes: int = 1000, seed: int = 0,
                 variant: Variant | str = Variant.SEGB, threads: int = 1) -> CheckReport:
    """Count unsafe rounds over many episodes; any single one fails the check."""
    with _Timer() as timer:
        violations, min_margin, n = 0, math.inf, 0
        for k, inst in enumerate(insts):
            rows = simulate_episodes(inst, T, episodes, seed + k, variant, threads)
            s = summarize(T, rows)
            violations += s.violations
            min_margin = min(min_margin, s.min_margin)
            n += len(rows)
    return _report("safety", violations, 0.0, n, timer,
                   {"violations": violations, "min_margin": min_margin})


def all_ordered_values(inst: Instance) -> list[tuple[gmdp.OrderedPolicySpec, float]]:
    """``W(pi, A)`` of every ordered policy (exhaustive, for small instances)."""
    out = []
    for left in permutations(inst.above_arms):
        for right in permutations(inst.below_arms):
            spec = gmdp.OrderedPolicySpec(tuple(left), tuple(right))
            out.append((spec, float(gmdp.evaluate_policy(
                inst, gmdp.ordered_policy(inst, spec))[inst.full])))
    return out
