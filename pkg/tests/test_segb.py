import math
import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from ibsafe import gmdp, reports
from ibsafe.cli import bundled_instance
from ibsafe.errors import BoundVacuous, HorizonZero
from ibsafe.generators import InstanceGenerator, Mode
from ibsafe.model import DiscreteDistribution, Instance, load_instance
from ibsafe.segb import (
    Phase,
    TerminalMode,
    Variant,
    convergence_floor,
    draw_realization,
    episode_rng,
    episode_seed,
    exploration_budget,
    monte_carlo_utility,
    realized_delta_gamma,
    run_segb_episode,
    simulate_episodes,
)

D = DiscreteDistribution.from_pairs
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def ex1():
    return load_instance(bundled_instance("normal4_grid21"))


@pytest.fixture(scope="module")
def dom4():
    return load_instance(bundled_instance("dominance_k4"))


def test_no_above_arms_plays_safe_arm():
    inst = Instance.from_distributions([D([(-2, .5), (1, .5)]), D([(-1, .9), (3, .1)])])
    r = run_segb_episode(inst, (1.0, 3.0), 25, random.Random(0))
    assert r.utility == 0.0
    assert r.terminal_mode is TerminalMode.SAFE_ARM_FOREVER
    assert [log.realized_arm for log in r.rounds] == [0] * 25


class TestAllNegative:
    X = (-0.4, -0.2, -1.3, -2.0)

    def test_golden_trace(self, ex1):
        r = run_segb_episode(ex1, self.X, 12, random.Random(0))
        assert reports.trace_csv(r) == (GOLDEN / "normal4_all_negative_trace.csv").read_text()

    @pytest.mark.parametrize("seed", range(10))
    def test_shape(self, ex1, seed):
        r = run_segb_episode(ex1, self.X, 30, random.Random(seed))
        assert r.exploration_rounds <= ex1.k
        assert r.terminal_mode is TerminalMode.SAFE_ARM_FOREVER
        for log in r.rounds:
            assert log.reward >= -1e-12
            if log.phase is Phase.GMDP and len(log.portfolio.weights) == 2:
                assert log.reward == pytest.approx(0.0, abs=1e-12)
            if log.phase is Phase.SAFE:
                assert log.reward == 0.0
        # singleton rounds on unexplored above arms earn the prior mean
        singles = [log for log in r.rounds if log.phase is Phase.GMDP and len(log.portfolio.weights) == 1]
        for log in singles:
            assert log.reward == pytest.approx(ex1.mu(log.realized_arm))
        assert r.utility == pytest.approx(math.fsum(log.reward for log in r.rounds))


def test_two_point_found_in_round_one():
    H = 3.0
    inst = Instance.from_distributions([D([(-1, .6), (H, .4)]), D([(-1, .5), (H, .5)])])
    T = 40
    r = run_segb_episode(inst, (-1.0, H), T, random.Random(0), Variant.SEGB_PRIME)
    # the higher-mean arm 2 goes first and is positive
    r1 = inst.mu(2)
    assert r.rounds[0].realized_arm == 2
    assert r.utility == pytest.approx(r1 + (T - 1) * H, abs=1e-12)
    assert r.exploration_rounds == 1


def test_segb_explores_everything_before_exploiting():
    inst = Instance.from_distributions([D([(-1, .2), (2, .8)]), D([(-1, .5), (4, .5)]),
                                        D([(-3, .8), (5, .2)])])
    r = run_segb_episode(inst, (2.0, 4.0, 5.0), 2000, random.Random(3))
    assert r.terminal_mode is TerminalMode.EXPLOIT_BEST
    exploit = [log for log in r.rounds if log.phase is Phase.EXPLOIT]
    assert exploit and all(log.realized_arm == 3 and log.reward == 5.0 for log in exploit)


def test_horizon_during_exploration():
    inst = Instance.from_distributions([D([(-1, .2), (2, .8)]), D([(-3, .8), (5, .2)])])
    r = run_segb_episode(inst, (-1.0, 5.0), 1, random.Random(0))
    assert len(r.rounds) == 1
    with pytest.raises(HorizonZero):
        run_segb_episode(inst, (-1.0, 5.0), 0, random.Random(0))


class TestDeltaGamma:
    def test_gamma(self):
        inst = Instance.from_distributions([D([(-1, .5), (2, .5)]), D([(-2, .5), (0, .5)]),
                                            D([(-4, .5), (0, .5)])])
        assert realized_delta_gamma(inst, (1.0, -2.0, -4.0)).gamma == 2.0

    def test_deltas(self):
        inst = Instance.from_distributions([D([(-1, .5), (0.5, .5)]), D([(-3, .5), (1, .5)]),
                                            D([(-1, .2), (1.5, .8)]), D([(-1, .3), (2, .7)])])
        dg = realized_delta_gamma(inst, (0.5, -3.0, 1.5, -1.0))
        assert (dg.delta1, dg.delta2, dg.delta) == (0.5, 1.5, 1.5)

    def test_all_negative(self):
        inst = Instance.from_distributions([D([(-1, .2), (2, .8)]), D([(-3, .8), (5, .2)])])
        assert realized_delta_gamma(inst, (-1.0, -3.0)).delta is None


class TestMonteCarlo:
    def test_one_episode_is_reproducible(self, dom4):
        a = monte_carlo_utility(dom4, 50, 1, 9)
        b = monte_carlo_utility(dom4, 50, 1, 9)
        assert a == b

    def test_safe_only_instance(self):
        inst = Instance.from_distributions([D([(-2, .5), (1, .5)])])
        assert monte_carlo_utility(inst, 100, 200, 0).mean == 0.0

    def test_thread_count_does_not_change_results(self, dom4):
        one = simulate_episodes(dom4, 100, 300, 5, threads=1)
        four = simulate_episodes(dom4, 100, 300, 5, threads=4)
        assert one == four

    def test_seed_schedule_is_stable(self):
        assert episode_seed(0, 0) == 12935080325729570654
        assert episode_seed(2 ** 64 - 1, 7) == 1201166354198324764

    def test_large_T_near_optimum(self, dom4):
        W, _ = gmdp.solve_optimal(dom4)
        T = 1000
        mc = monte_carlo_utility(dom4, T, 4000, 1)
        budget = exploration_budget(dom4, 1.0)
        assert abs(mc.mean / T - W[dom4.full]) <= 3 * mc.std_error / T + budget * 3.0 / T


class TestFloor:
    def test_arithmetic(self):
        inst = Instance.from_distributions([D([(-1, .5), (3, .5)]), D([(-1, .5), (3, .5)]),
                                            D([(-2, .5), (0, .5)]), D([(-3, .5), (-1, .5)])])
        assert convergence_floor(inst, 100, 1.0, 1.0) == 88.0

    def test_vacuous(self, dom4):
        with pytest.raises(BoundVacuous):
            convergence_floor(dom4, 5, 1.0, 1.0)

    @settings(max_examples=50)
    @given(st.integers(1, 6), st.integers(0, 10 ** 6))
    def test_integer_supports_budget(self, H, seed):
        # supports in {-H..H}: the smallest positive value is at least 1 and
        # gamma is at most H, so the budget is at most K(H + 1)
        rng = random.Random(seed)
        arms = []
        while len(arms) < 4:
            vals = rng.sample(range(-H, H + 1), rng.randint(1, min(4, 2 * H + 1)))
            w = [rng.random() + 0.01 for _ in vals]
            d = D([(v, x / math.fsum(w)) for v, x in zip(vals, w)])
            if abs(d.mean) > 1e-6:
                arms.append(d)
        inst = Instance.from_distributions(arms)
        assert exploration_budget(inst, 1.0) <= inst.k * (H + 1) + 1e-9

    def test_floor_over_T_tends_to_w_star(self, dom4):
        vals = [convergence_floor(dom4, T, 1.0, 2.0) / T for T in (10 ** 3, 10 ** 5, 10 ** 7)]
        assert vals[0] < vals[1] < vals[2] < 2.0
        assert vals[2] == pytest.approx(2.0, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(list(Variant)))
def test_every_round_is_safe(seed, variant):
    inst = InstanceGenerator(Mode.UNRESTRICTED, 3, 3, 4, seed=seed).instances(1)[0]
    rng = episode_rng(seed, 0)
    r = run_segb_episode(inst, draw_realization(inst, rng), 300, rng, variant, strict=True)
    assert r.violations == 0
    assert all(log.safety_margin >= -1e-9 for log in r.rounds)


def test_untraced_totals_match_traced(dom4):
    for e in range(50):
        rng_a, rng_b = episode_rng(4, e), episode_rng(4, e)
        x = draw_realization(dom4, rng_a)
        draw_realization(dom4, rng_b)
        a = run_segb_episode(dom4, x, 500, rng_a, trace=True)
        b = run_segb_episode(dom4, x, 500, rng_b, trace=False)
        assert a.utility == pytest.approx(b.utility, rel=1e-12, abs=1e-9)
        assert a.exploration_rounds == b.exploration_rounds
