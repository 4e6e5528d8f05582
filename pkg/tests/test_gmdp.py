from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ibsafe import gmdp
from ibsafe.errors import BadPermutation, NotPValid, WrongAboveCount
from ibsafe.generators import InstanceGenerator, Mode
from ibsafe.model import DiscreteDistribution, Instance, arm_bit, load_instance, state_of
from ibsafe.oracles import brute_force_terminal_reward, q_one_above, q_one_below, recursive_value
from ibsafe.cli import bundled_instance
from ibsafe.verification import all_ordered_values, claim3_instance

D = DiscreteDistribution.from_pairs
Pair, Single, STOP = gmdp.Action.pair, gmdp.Action.single, gmdp.STOP


@pytest.fixture(scope="module")
def ex1():
    return load_instance(bundled_instance("normal4_grid21"))


def means_only(*mus):
    """Two-point arms with the requested means, so every state is reachable."""
    arms = []
    for m in mus:
        arms.append(D([(m - 1, 0.5), (m + 1, 0.5)]))
    return Instance.from_distributions(arms)


def optimal_by_recursion(inst: Instance) -> float:
    """Max over safe actions by plain recursion, leaves from joint enumeration."""

    @lru_cache(maxsize=None)
    def best(s):
        acts = gmdp.safe_actions(inst, s)
        if not acts:
            return brute_force_terminal_reward(inst, inst.full & ~s)
        vals = []
        for a in acts:
            if a.kind == "single":
                vals.append(best(s & ~arm_bit(a.i)))
            else:
                mi, mj = inst.mu(a.i), inst.mu(a.j)
                vals.append((-mj * best(s & ~arm_bit(a.i)) + mi * best(s & ~arm_bit(a.j)))
                            / (mi - mj))
        return max(vals)

    return best(inst.full)


class TestTerminal:
    def test_empty_state_is_terminal(self, ex1):
        assert gmdp.is_terminal(ex1, 0)

    def test_below_only_state_is_terminal(self, ex1):
        assert gmdp.is_terminal(ex1, state_of([3, 4]))
        assert not gmdp.is_terminal(ex1, state_of([2, 4]))

    def test_reward_with_nothing_explored(self, ex1):
        assert gmdp.expected_terminal_reward(ex1, 0) == 0.0

    def test_single_arm(self):
        inst = Instance.from_distributions([D([(-1, .5), (1.5, .5)])])
        assert gmdp.expected_terminal_reward(inst, 1) == pytest.approx(0.75, abs=1e-15)

    def test_two_arms_enumerated(self):
        inst = Instance.from_distributions([D([(-1, .5), (2, .5)]), D([(-2, .5), (1, .5)])])
        # only X1 = 2 fires the indicator, and then the max is 2
        assert gmdp.expected_terminal_reward(inst, 1) == pytest.approx(1.0, abs=1e-15)
        assert brute_force_terminal_reward(inst, 1) == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_matches_enumeration(self, seed):
        inst = InstanceGenerator(Mode.UNRESTRICTED, 3, 2, 3, seed=seed, min_above=0).instances(1)[0]
        for e in range(1 << inst.k):
            assert gmdp.expected_terminal_reward(inst, e) == pytest.approx(
                brute_force_terminal_reward(inst, e), abs=1e-12)

    def test_negative_values_do_not_cancel(self):
        big = Instance.from_distributions([D([(-1e10, .5), (1e10 + 2, .5)]), D([(-1e10, .9), (1, .1)])])
        assert gmdp.expected_terminal_reward(big, 2) == pytest.approx(
            brute_force_terminal_reward(big, 2), rel=1e-12)


class TestActions:
    def test_full_state(self, ex1):
        assert set(gmdp.safe_actions(ex1, ex1.full)) == {Pair(1, 3), Pair(1, 4), Pair(2, 3), Pair(2, 4)}

    def test_terminal(self, ex1):
        assert gmdp.safe_actions(ex1, state_of([3, 4])) == []

    def test_singletons_when_no_below(self, ex1):
        assert gmdp.safe_actions(ex1, state_of([1, 2])) == [Single(1), Single(2)]

    def test_ogp_action(self, ex1):
        assert gmdp.ogp_action(ex1, ex1.full) == Pair(1, 3)
        assert gmdp.ogp_action(ex1, state_of([3, 4])) is STOP
        assert gmdp.ogp_action(ex1, state_of([1, 2])) == Single(1)


class TestSolve:
    def test_no_below_arms(self):
        inst = Instance.from_distributions([D([(-1, .4), (2, .6)]), D([(-3, .2), (1, .8)])])
        W, _ = gmdp.solve_optimal(inst)
        assert W[inst.full] == pytest.approx(gmdp.expected_terminal_reward(inst, inst.full), abs=1e-15)

    def test_single_above_arm(self):
        inst = Instance.from_distributions([D([(-1, .5), (3, .5)])])
        W, _ = gmdp.solve_optimal(inst)
        assert W[1] == pytest.approx(1.5, abs=1e-15)

    def test_matches_ordered_enumeration(self, ex1):
        W, pol = gmdp.solve_optimal(ex1)
        best = max(v for _, v in all_ordered_values(ex1))
        assert W[ex1.full] == pytest.approx(best, abs=1e-12)
        assert W[ex1.full] == pytest.approx(optimal_by_recursion(ex1), abs=1e-12)

    def test_argmax_is_fixed_point(self, ex1):
        W, pol = gmdp.solve_optimal(ex1)
        assert np.array_equal(gmdp.evaluate_policy(ex1, pol), W)

    def test_no_above_arms(self):
        inst = Instance.from_distributions([D([(-1, .5), (0.5, .5)]), D([(-2, .5), (1, .5)])])
        W, pol = gmdp.solve_optimal(inst)
        assert W[inst.full] == 0.0
        assert gmdp.evaluate_policy(inst, pol)[inst.full] == 0.0

    def test_ordered_policies_bounded_by_optimum(self, ex1):
        W, _ = gmdp.solve_optimal(ex1)
        for _, v in all_ordered_values(ex1):
            assert v <= W[ex1.full] + 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_against_recursion(self, seed):
        inst = InstanceGenerator(Mode.UNRESTRICTED, 3, 3, 3, seed=seed).instances(1)[0]
        W, _ = gmdp.solve_optimal(inst)
        assert W[inst.full] == pytest.approx(optimal_by_recursion(inst), abs=1e-10)

    def test_lowest_pair_wins_ties(self):
        inst = means_only(1.0, 1.0, -1.0, -1.0)
        _, pol = gmdp.solve_optimal(inst)
        assert pol.action(inst.full) == Pair(1, 3)

    def test_ogp_evaluation_matches_recursive_oracle(self, ex1):
        w = gmdp.evaluate_policy(ex1, gmdp.ogp_policy(ex1))
        leaf = lambda s: brute_force_terminal_reward(ex1, ex1.full & ~s)

        def choose(s):
            a = gmdp.ogp_action(ex1, s)
            return (0, 0) if a is STOP else (a.i, a.j)

        assert w[ex1.full] == pytest.approx(recursive_value(ex1, ex1.full, choose, leaf), abs=1e-12)


class TestReach:
    def test_empty_state(self, ex1):
        assert gmdp.reach_probability_empty(ex1, gmdp.ogp_policy(ex1), 0) == 1.0

    def test_one_above_two_below(self):
        inst = means_only(1.0, -1.0, -1.0)
        assert gmdp.reach_probability_empty(inst, gmdp.ogp_policy(inst), inst.full) == pytest.approx(0.25)
        assert q_one_above(1.0, [-1.0, -1.0]) == 0.25

    def test_two_above_one_below(self):
        # Hand enumeration: pair(a1, a3) hits a3 w.p. 2/3; otherwise pair(a2, a3)
        # hits it w.p. 1/2. Q = 2/3 + (1/3)(1/2) = 5/6.
        inst = means_only(2.0, 1.0, -1.0)
        expect = Fraction(2, 3) + Fraction(1, 3) * Fraction(1, 2)
        for pol in (gmdp.ogp_policy(inst), gmdp.ordered_policy(inst, gmdp.OrderedPolicySpec((2, 1), (3,)))):
            assert gmdp.reach_probability_empty(inst, pol, inst.full) == pytest.approx(float(expect))
        assert q_one_below([2.0, 1.0], -1.0) == pytest.approx(float(expect))

    def test_no_below_reaches_empty(self):
        inst = means_only(2.0, 1.0)
        assert gmdp.reach_probability_empty(inst, gmdp.ogp_policy(inst), inst.full) == 1.0


class TestOrdered:
    def test_fixed_orders(self, ex1):
        pol = gmdp.ordered_policy(ex1, gmdp.OrderedPolicySpec((1, 2), (3, 4)))
        assert pol.action(ex1.full) == Pair(1, 3)
        assert pol.action(state_of([2, 3, 4])) == Pair(2, 3)
        assert pol.action(state_of([1, 2, 4])) == Pair(1, 4)
        assert pol.action(state_of([2, 4])) == Pair(2, 4)
        assert pol.action(state_of([2])) == Single(2)
        assert pol.action(state_of([3, 4])) is STOP

    def test_ogp_is_decreasing_mean_order(self):
        inst = means_only(1.0, -2.0, 3.0, -0.5, -1.0)
        spec = gmdp.OrderedPolicySpec((1, 3), (4, 5, 2))
        assert gmdp.ogp_policy(inst) == gmdp.ordered_policy(inst, spec)

    def test_unique_policy(self):
        inst = means_only(1.0, -1.0)
        specs = list(gmdp.enumerate_ordered_specs(inst))
        assert len(specs) == 1
        assert gmdp.ordered_policy(inst, specs[0]) == gmdp.solve_optimal(inst)[1]

    def test_bad_permutation(self, ex1):
        with pytest.raises(BadPermutation):
            gmdp.ordered_policy(ex1, gmdp.OrderedPolicySpec((1,), (3, 4)))


class TestRandomPolicies:
    def test_always_pvalid(self, ex1):
        for seed in range(20):
            gmdp.check_pvalid(ex1, gmdp.sample_pvalid_policy(ex1, seed))

    def test_seeds_differ(self, ex1):
        same = sum(gmdp.sample_pvalid_policy(ex1, s) == gmdp.sample_pvalid_policy(ex1, s + 1000)
                   for s in range(100))
        assert same == 0

    def test_single_legal_action_is_deterministic(self):
        inst = means_only(1.0, -1.0)
        assert gmdp.sample_pvalid_policy(inst, 1) == gmdp.sample_pvalid_policy(inst, 2)

    def test_invalid_policy_rejected(self, ex1):
        pol = gmdp.ogp_policy(ex1)
        first = pol.first.copy()
        first[ex1.full] = 3  # a below arm cannot lead a pair
        with pytest.raises(NotPValid):
            gmdp.evaluate_policy(ex1, gmdp.PolicyTable(ex1.k, first, pol.second))


class TestIndex:
    def test_never_positive_arm(self):
        inst = Instance.from_distributions([D([(-1, .5), (2, .5)]), D([(-2, .5), (-1, .5)])])
        assert gmdp.fstar_index(inst, inst.full, 2) == 0.0

    def test_identical_arms(self):
        b = D([(-3, .6), (1, .4)])
        inst = Instance.from_distributions([D([(-1, .5), (2, .5)]), b, b])
        assert gmdp.fstar_index(inst, inst.full, 2) == gmdp.fstar_index(inst, inst.full, 3)

    def test_requires_one_above(self, ex1):
        with pytest.raises(WrongAboveCount):
            gmdp.fstar_index(ex1, ex1.full, 3)

    def test_direct_definition(self):
        inst = Instance.from_distributions([D([(-1, .5), (2, .5)]), D([(-3, .6), (1, .4)]),
                                            D([(-2, .7), (4, .3)])])
        # Pr(X2 > 0) * E[max | X2 > 0] / |mu2| with X2 = 1 w.p. .4, mu2 = -1.4
        cond = 0.35 * 1 + 0.15 * 4 + 0.35 * 2 + 0.15 * 4
        assert gmdp.fstar_index(inst, inst.full, 2) == pytest.approx(0.4 * cond / 1.4, abs=1e-15)


class TestClaim3Values:
    """Values of the three-arm counterexample at epsilon = 0.1, frozen from our DP."""

    def test_frozen_values(self):
        inst = claim3_instance(0.1)
        W, _ = gmdp.solve_optimal(inst)
        assert W[state_of([1, 3])] == pytest.approx(637500.1375022501, rel=1e-12)
        assert W[state_of([1, 2])] == pytest.approx(693750.1375065483, rel=1e-12)
        assert W[inst.full] == pytest.approx(
            gmdp.evaluate_policy(inst, gmdp.ogp_policy(inst))[inst.full], rel=1e-12)

    def test_independent_recursion(self):
        inst = claim3_instance(0.1)
        W, _ = gmdp.solve_optimal(inst)
        assert W[inst.full] == pytest.approx(optimal_by_recursion(inst), rel=1e-12)
        assert np.all(np.isfinite(W))
