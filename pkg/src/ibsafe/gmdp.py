"""Exact dynamic programming over the goal MDP whose states are unexplored-arm sets.

Every table (values, reach probabilities, policies) is a dense numpy array
of length ``2**K`` indexed by the state bitmask. Successors of a state
always have one fewer member, so all recursions run bottom-up over
popcount layers, vectorized within each layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import BadPermutation, InstanceTooLarge, NotPValid, WrongAboveCount
from .model import MAX_ARMS, Instance, StateSet, arm_bit, members

_CHUNK = 4096


@dataclass(frozen=True)
class Action:
    """One GMDP action: ``pair`` mixes above arm ``i`` with below arm ``j``,
    ``single`` plays above arm ``i`` alone, ``stop`` marks a terminal state."""

    kind: str
    i: int = 0
    j: int = 0

    @classmethod
    def pair(cls, i: int, j: int) -> "Action":
        return cls("pair", i, j)

    @classmethod
    def single(cls, i: int) -> "Action":
        return cls("single", i, i)

    def __str__(self):
        if self.kind == "stop":
            return "Stop"
        if self.kind == "single":
            return f"Single({self.i})"
        return f"Pair({self.i},{self.j})"


STOP = Action("stop")


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Stationary policy as two arm-index arrays over all ``2**K`` states.

    ``first[s] == second[s] == 0`` means Stop; ``first == second > 0`` a
    singleton; otherwise a pair (above arm ``first``, below arm ``second``).
    """

    k: int
    first: np.ndarray
    second: np.ndarray

    def action(self, s: StateSet) -> Action:
        i, j = int(self.first[s]), int(self.second[s])
        if i == 0:
            return STOP
        return Action.single(i) if i == j else Action.pair(i, j)

    def __eq__(self, other):
        return (isinstance(other, PolicyTable) and self.k == other.k
                and np.array_equal(self.first, other.first)
                and np.array_equal(self.second, other.second))

    def differs_at(self, other: "PolicyTable") -> np.ndarray:
        return np.flatnonzero((self.first != other.first) | (self.second != other.second))


@dataclass(frozen=True)
class OrderedPolicySpec:
    """Priority orders over the above arms (``left``) and below arms (``right``)."""

    left: tuple[int, ...]
    right: tuple[int, ...]


@lru_cache(maxsize=32)
def _layers(k: int) -> tuple[np.ndarray, ...]:
    states = np.arange(1 << k, dtype=np.int64)
    pop = np.zeros(1 << k, dtype=np.int64)
    for b in range(k):
        pop += (states >> b) & 1
    return tuple(states[pop == n] for n in range(k + 1))


def _check_size(inst: Instance):
    if inst.k > MAX_ARMS:
        raise InstanceTooLarge(f"K={inst.k} exceeds {MAX_ARMS}")


def _mu_array(inst: Instance) -> np.ndarray:
    return np.array((0.0,) + inst.means)


def _states(inst: Instance) -> np.ndarray:
    return np.arange(1 << inst.k, dtype=np.int64)


def _bits(arms: np.ndarray) -> np.ndarray:
    return np.left_shift(np.int64(1), arms.astype(np.int64) - 1)


def is_terminal(inst: Instance, s: StateSet) -> bool:
    """No positive-mean arm left, hence no safe portfolio over ``s``."""
    return (s & inst.above_mask) == 0


def terminal_mask(inst: Instance) -> np.ndarray:
    return (_states(inst) & inst.above_mask) == 0


# ---------------------------------------------------------------------------
# terminal rewards


def _cdf_tables(inst: Instance):
    """CDF of every arm on the sorted union of support values.

    Returns ``(grid, F, Fneg)`` where ``F[a, k] = Pr(X_a <= grid[k])`` and
    ``Fneg[a, k] = Pr(X_a <= min(grid[k], 0))``. Row ``a`` is arm ``a + 1``.
    """
    grid = np.array(sorted({v for d in inst.distributions for v in d.values}))
    clipped = np.minimum(grid, 0.0)
    F = np.empty((inst.k, grid.size))
    Fneg = np.empty_like(F)
    for a, d in enumerate(inst.distributions):
        vals = np.array(d.values)
        cum = np.concatenate(([0.0], np.array(d._cum)))
        F[a] = cum[np.searchsorted(vals, grid, side="right")]
        Fneg[a] = cum[np.searchsorted(vals, clipped, side="right")]
    return grid, F, Fneg


def _expectation_from_cdf(grid: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``sum_k grid[k] * (H[..., k] - H[..., k-1])`` for a (sub-)CDF ``H``."""
    dH = np.diff(H, axis=-1, prepend=0.0)
    return dH @ grid


def _terminal_rewards_for(inst: Instance, explored: np.ndarray, tables=None) -> np.ndarray:
    grid, F, Fneg = tables if tables is not None else _cdf_tables(inst)
    fall = np.prod(F, axis=0)
    out = np.empty(explored.size)
    for start in range(0, explored.size, _CHUNK):
        ex = explored[start:start + _CHUNK]
        G = np.ones((ex.size, grid.size))
        for a in range(inst.k):
            inside = ((ex >> a) & 1).astype(bool)[:, None]
            G *= np.where(inside, Fneg[a], F[a])
        # H = Pr(max <= v, some explored arm > 0); exactly 0 for v <= 0.
        out[start:start + _CHUNK] = _expectation_from_cdf(grid, fall - G)
    out[explored == 0] = 0.0
    return out


def expected_terminal_reward(inst: Instance, explored: StateSet) -> float:
    """``E[max_a X(a) * 1{some arm in explored realized > 0}]``.

    Evaluated in O(V*K) through products of per-arm CDFs on the union of
    support values rather than by enumerating the joint outcome space.
    """
    return float(_terminal_rewards_for(inst, np.array([explored], dtype=np.int64))[0])


def terminal_reward_table(inst: Instance) -> np.ndarray:
    """``R(s)`` averaged over the priors, at every terminal state (0 elsewhere)."""
    states = _states(inst)
    term = terminal_mask(inst)
    out = np.zeros(states.size)
    ts = states[term]
    out[term] = _terminal_rewards_for(inst, inst.full & ~ts)
    return out


# ---------------------------------------------------------------------------
# actions and policies


def safe_actions(inst: Instance, s: StateSet) -> list[Action]:
    above, below = members(s & inst.above_mask), members(s & inst.below_mask)
    if not above:
        return []
    if not below:
        return [Action.single(i) for i in above]
    return [Action.pair(i, j) for i in above for j in below]


def _pair_weights(mu: np.ndarray, first: np.ndarray, second: np.ndarray):
    mi, mj = mu[first], mu[second]
    single = first == second
    gap = np.where(single, 1.0, mi - mj)
    wi = np.where(single, 1.0, -mj / gap)
    wj = np.where(single, 0.0, mi / gap)
    return wi, wj


def check_pvalid(inst: Instance, pol: PolicyTable) -> None:
    """Raise :class:`NotPValid` unless ``pol`` is a P-valid stationary policy."""
    if pol.k != inst.k or pol.first.shape != (1 << inst.k,) or pol.second.shape != (1 << inst.k,):
        raise NotPValid("policy table does not match the instance size")
    states = _states(inst)
    first = pol.first.astype(np.int64)
    second = pol.second.astype(np.int64)
    term = terminal_mask(inst)
    has_below = (states & inst.below_mask) != 0
    if np.any(first[term] != 0) or np.any(second[term] != 0):
        raise NotPValid("terminal states must map to Stop")
    nt = ~term
    f, g = first[nt], second[nt]
    if np.any(f < 1) or np.any(f > inst.k) or np.any(g < 1) or np.any(g > inst.k):
        raise NotPValid("non-terminal state without an action")
    ss = states[nt]
    in_state = ((ss & _bits(f)) != 0) & ((ss & _bits(g)) != 0)
    f_above = (_bits(f) & inst.above_mask) != 0
    g_below = (_bits(g) & inst.below_mask) != 0
    hb = has_below[nt]
    ok = in_state & f_above & np.where(hb, g_below, f == g)
    if not np.all(ok):
        bad = int(ss[np.flatnonzero(~ok)[0]])
        raise NotPValid(f"illegal action {pol.action(bad)} at state {bad}")


def _backward(inst: Instance, pol: PolicyTable, leaf: np.ndarray) -> np.ndarray:
    mu = _mu_array(inst)
    val = np.where(terminal_mask(inst), leaf, 0.0)
    A = inst.above_mask
    for layer in _layers(inst.k)[1:]:
        nt = layer[(layer & A) != 0]
        if nt.size == 0:
            continue
        f = pol.first[nt].astype(np.int64)
        g = pol.second[nt].astype(np.int64)
        wi, wj = _pair_weights(mu, f, g)
        val[nt] = wi * val[nt & ~_bits(f)] + wj * val[nt & ~_bits(g)]
    return val


def evaluate_policy(inst: Instance, pol: PolicyTable) -> np.ndarray:
    """``W(pol, s)`` for every state: expected terminal reward under ``pol``."""
    check_pvalid(inst, pol)
    return _backward(inst, pol, terminal_reward_table(inst))


def reach_table(inst: Instance, pol: PolicyTable) -> np.ndarray:
    """``Q(pol, s)``: probability of exploring every arm of ``s``."""
    check_pvalid(inst, pol)
    leaf = np.zeros(1 << inst.k)
    leaf[0] = 1.0
    return _backward(inst, pol, leaf)


def reach_probability_empty(inst: Instance, pol: PolicyTable, s: StateSet) -> float:
    return float(reach_table(inst, pol)[s])


def solve_optimal(inst: Instance) -> tuple[np.ndarray, PolicyTable]:
    """Optimal values ``W*`` and an argmax P-valid policy.

    Ties go to the lexicographically smallest ``(i, j)``.
    """
    _check_size(inst)
    k = inst.k
    mu = _mu_array(inst)
    W = terminal_reward_table(inst)
    first = np.zeros(1 << k, dtype=np.int8)
    second = np.zeros(1 << k, dtype=np.int8)
    above, below = inst.above_arms, inst.below_arms
    A, B = inst.above_mask, inst.below_mask
    for layer in _layers(k)[1:]:
        nt = layer[(layer & A) != 0]
        if nt.size == 0:
            continue
        best = np.full(nt.size, -np.inf)
        bi = np.zeros(nt.size, dtype=np.int8)
        bj = np.zeros(nt.size, dtype=np.int8)
        no_below = (nt & B) == 0

        def offer(sel, v, i, j):
            idx = np.flatnonzero(sel)
            better = v > best[idx]
            idx = idx[better]
            best[idx] = v[better]
            bi[idx] = i
            bj[idx] = j

        for i in above:
            has_i = (nt & arm_bit(i)) != 0
            for j in below:
                sel = has_i & ((nt & arm_bit(j)) != 0)
                if not sel.any():
                    continue
                ss = nt[sel]
                gap = mu[i] - mu[j]
                v = (-mu[j] / gap) * W[ss & ~arm_bit(i)] + (mu[i] / gap) * W[ss & ~arm_bit(j)]
                offer(sel, v, i, j)
            sel = has_i & no_below
            if sel.any():
                offer(sel, W[nt[sel] & ~arm_bit(i)], i, i)
        W[nt] = best
        first[nt] = bi
        second[nt] = bj
    return W, PolicyTable(k, first, second)


def ogp_action(inst: Instance, s: StateSet) -> Action:
    """Lowest-index above arm, mixed with the highest-mean below arm if any."""
    above = members(s & inst.above_mask)
    if not above:
        return STOP
    i = above[0]
    below = members(s & inst.below_mask)
    if not below:
        return Action.single(i)
    j = max(below, key=lambda b: (inst.means[b - 1], -b))
    return Action.pair(i, j)


def ogp_spec(inst: Instance) -> OrderedPolicySpec:
    return OrderedPolicySpec(
        left=tuple(inst.above_arms),
        right=tuple(sorted(inst.below_arms, key=lambda b: (-inst.means[b - 1], b))),
    )


def ogp_policy(inst: Instance) -> PolicyTable:
    return ordered_policy(inst, ogp_spec(inst))


def ordered_policy(inst: Instance, spec: OrderedPolicySpec) -> PolicyTable:
    """Policy that always consumes the highest-priority remaining arm of each class.

    Defined on every state, including ones unreachable from the full set.
    """
    if sorted(spec.left) != inst.above_arms:
        raise BadPermutation(f"left order {spec.left} is not a permutation of {inst.above_arms}")
    if sorted(spec.right) != inst.below_arms:
        raise BadPermutation(f"right order {spec.right} is not a permutation of {inst.below_arms}")
    states = _states(inst)
    first = np.zeros(states.size, dtype=np.int8)
    second = np.zeros(states.size, dtype=np.int8)
    for i in reversed(spec.left):
        first = np.where((states & arm_bit(i)) != 0, i, first).astype(np.int8)
    for j in reversed(spec.right):
        second = np.where((states & arm_bit(j)) != 0, j, second).astype(np.int8)
    second = np.where(second == 0, first, second).astype(np.int8)
    second[first == 0] = 0
    return PolicyTable(inst.k, first, second)


def _pick_member(states: np.ndarray, arms: Sequence[int], u: np.ndarray) -> np.ndarray:
    """Uniformly chosen member of ``states & arms`` per state, driven by ``u``."""
    count = np.zeros(states.size, dtype=np.int64)
    for a in arms:
        count += (states >> (a - 1)) & 1
    target = np.floor(u * count).astype(np.int64)
    out = np.zeros(states.size, dtype=np.int8)
    seen = np.zeros(states.size, dtype=np.int64)
    for a in arms:
        present = ((states >> (a - 1)) & 1).astype(bool)
        hit = present & (seen == target) & (out == 0)
        out[hit] = a
        seen += present
    return out


def sample_pvalid_policy(inst: Instance, rng) -> PolicyTable:
    """Independently uniform legal action at every non-terminal state.

    A uniform pair from above x below is an independent uniform pick from
    each side.
    """
    _check_size(inst)
    rng = np.random.default_rng(rng)
    states = _states(inst)
    first = _pick_member(states, inst.above_arms, rng.random(states.size))
    second = _pick_member(states, inst.below_arms, rng.random(states.size))
    second = np.where(second == 0, first, second).astype(np.int8)
    second[first == 0] = 0
    return PolicyTable(inst.k, first, second)


def enumerate_ordered_specs(inst: Instance):
    from itertools import permutations
    for left in permutations(inst.above_arms):
        for right in permutations(inst.below_arms):
            yield OrderedPolicySpec(tuple(left), tuple(right))


def fstar_index(inst: Instance, context: StateSet, l: int) -> float:
    """``Pr(X_l > 0) * E[max over context | X_l > 0] / |mu_l|``.

    Requires exactly one above arm in ``context`` and ``l`` a below arm of it.
    """
    if len(members(context & inst.above_mask)) != 1:
        raise WrongAboveCount("index needs exactly one above arm in the context")
    if not (context & inst.below_mask & arm_bit(l)):
        raise ValueError(f"arm {l} is not a below arm of the context")
    dl = inst.dist(l)
    if dl.prob_positive() == 0.0:
        return 0.0
    arms = members(context)
    grid = np.array(sorted({v for a in arms for v in inst.dist(a).values}))
    G = np.ones(grid.size)
    for a in arms:
        d = inst.dist(a)
        if a == l:
            # Pr(0 < X_l <= v): sub-CDF of the positive part.
            G *= np.array([sum(p for x, p in d.support if 0 < x <= v) for v in grid])
        else:
            G *= np.array([d.cdf(v) for v in grid])
    return float(_expectation_from_cdf(grid, G) / abs(inst.mu(l)))


def index_policy(inst: Instance, descending: bool = True) -> PolicyTable:
    """Right-ordered policy ranking below arms by the f* index (ties: lowest index)."""
    if len(inst.above_arms) != 1:
        raise WrongAboveCount("index policy needs exactly one above arm")
    idx = {j: fstar_index(inst, inst.full, j) for j in inst.below_arms}
    sign = -1.0 if descending else 1.0
    right = tuple(sorted(inst.below_arms, key=lambda j: (sign * idx[j], j)))
    return ordered_policy(inst, OrderedPolicySpec(tuple(inst.above_arms), right))
