import numpy as np
import pytest

from scheduler import (CapExceededError, InfeasibleMissionError, Mission, MissionSet, dispatch, drone_lb,
                       greedy_order, schedule_exact, schedule_greedy)
from tests.builders import toy_instance
from tests.oracles import dispatch_enumeration, dispatch_optimum, exhaustive_schedule


def mission_set(triples, m):
    return MissionSet(missions=tuple(Mission(j, k, tau) for j, k, tau in triples), m=m)


def random_missions(rng, count, m):
    triples = []
    for j in range(1, count + 1):
        k = int(rng.integers(1, m + 1))
        triples.append((j, k, int(rng.integers(1, 15))))
    return triples


def carriers(plan):
    counts = {}
    for seq in plan.sequences:
        assert len(set(seq)) == len(seq)
        for j in seq:
            counts[j] = counts.get(j, 0) + 1
    return counts


class TestDroneLowerBound:

    def test_empty(self):
        """No missions, no bound"""
        assert drone_lb(mission_set([], 3)).value == 0

    def test_work_and_longest_mission(self):
        """ceil(26 / 3) = 9 but the longest mission needs 10"""
        bound = drone_lb(mission_set([(1, 2, 10), (2, 1, 6)], 3))
        assert (bound.work, bound.m, bound.va, bound.longest) == (26, 3, 9, 10)
        assert bound.value == 10

    def test_single_mission(self):
        """One drone, one mission"""
        assert drone_lb(mission_set([(1, 1, 5)], 1)).value == 5

    def test_from_assignment(self):
        """Mission sets read tau from the instance"""
        ms = MissionSet.from_assignment(toy_instance(), {4: 2, 2: 1})
        assert [(x.customer, x.k, x.tau) for x in ms.missions] == [(2, 1, 9), (4, 2, 7)]
        assert drone_lb(ms).work == 23

    def test_invalid_mission_set(self):
        """Zero drones or non-positive tau are rejected"""
        with pytest.raises(ValueError):
            mission_set([(1, 1, 5)], 0)
        with pytest.raises(ValueError):
            mission_set([(1, 1, 0)], 1)


class TestScheduleGreedy:

    def test_collective_example(self):
        """The joint mission goes first and the single missions share the third drone"""
        plan = schedule_greedy(mission_set([(1, 2, 10), (2, 1, 6), (3, 1, 8)], 3))
        assert plan.makespan == 14
        assert plan.sequences == ((1,), (1,), (3, 2))
        assert carriers(plan) == {1: 2, 2: 1, 3: 1}

    def test_empty(self):
        """No missions finish at time 0"""
        plan = schedule_greedy(mission_set([], 2))
        assert plan.makespan == 0
        assert plan.sequences == ((), ())

    def test_whole_fleet_mission(self):
        """A mission using every drone takes tau"""
        assert schedule_greedy(mission_set([(1, 3, 7)], 3)).makespan == 7

    def test_mission_too_large(self):
        """k > m cannot be flown"""
        with pytest.raises(InfeasibleMissionError):
            schedule_greedy(mission_set([(1, 3, 7)], 2))

    def test_priority_order(self):
        """Largest work first, ties by customer id"""
        order = greedy_order(mission_set([(1, 1, 6), (2, 2, 3), (3, 1, 8)], 2))
        assert [x.customer for x in order] == [3, 1, 2]

    def test_dispatch_lowest_id_on_ties(self):
        """Equal availabilities go to the lowest drone id"""
        plan = dispatch([Mission(1, 1, 4), Mission(2, 1, 4), Mission(3, 1, 1)], 2)
        assert plan.sequences == ((1, 3), (2,))
        assert plan.completion == {1: 4, 2: 4, 3: 5}

    def test_ready_time(self):
        """Drones become available at the ready time"""
        assert schedule_greedy(mission_set([(1, 1, 4)], 1), ready=3).makespan == 7


class TestScheduleExact:

    def test_collective_example(self):
        """The collective example is optimal at 14"""
        plan = schedule_exact(mission_set([(1, 2, 10), (2, 1, 6), (3, 1, 8)], 3))
        assert plan.makespan == 14
        assert plan.proven

    def test_single_mission(self):
        """Any single mission takes tau and is proven"""
        plan = schedule_exact(mission_set([(5, 2, 9)], 4))
        assert plan.makespan == 9
        assert plan.proven

    def test_beats_greedy(self):
        """Balancing 3+3 against 2+2+2 beats largest-first"""
        ms = mission_set([(1, 1, 3), (2, 1, 3), (3, 1, 2), (4, 1, 2), (5, 1, 2)], 2)
        assert schedule_greedy(ms).makespan == 7
        plan = schedule_exact(ms)
        assert plan.makespan == 6
        assert plan.proven
        assert carriers(plan) == {j: 1 for j in range(1, 6)}

    def test_budget_exhausted(self):
        """A node budget of one returns the greedy plan unproven"""
        ms = mission_set([(1, 1, 3), (2, 1, 3), (3, 1, 2), (4, 1, 2), (5, 1, 2)], 2)
        plan = schedule_exact(ms, limit=1)
        assert not plan.proven
        assert plan.makespan == 7

    def test_cap(self):
        """Mission sets above the cap are refused"""
        ms = mission_set([(j, 1, 1) for j in range(1, 6)], 2)
        with pytest.raises(CapExceededError):
            schedule_exact(ms, cap=4)

    def test_mission_too_large(self):
        """k > m cannot be flown"""
        with pytest.raises(InfeasibleMissionError):
            schedule_exact(mission_set([(1, 1, 2), (2, 3, 7)], 2))

    @pytest.mark.parametrize("seed", range(50))
    def test_six_missions_two_drones(self, seed):
        """Six random missions on two drones match exhaustive enumeration"""
        rng = np.random.default_rng(seed)
        triples = random_missions(rng, 6, 2)
        plan = schedule_exact(mission_set(triples, 2))
        assert plan.proven
        assert plan.makespan == exhaustive_schedule(triples, 2)

    @pytest.mark.parametrize("seed", range(60))
    def test_bounds_sandwich(self, seed):
        """drone_lb <= exact <= greedy <= 2 * exact, and exact equals both oracles"""
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(1, 4))
        triples = random_missions(rng, int(rng.integers(0, 6)), m)
        ms = mission_set(triples, m)
        exact = schedule_exact(ms)
        greedy = schedule_greedy(ms)
        assert exact.proven
        assert drone_lb(ms).value <= exact.makespan <= greedy.makespan <= 2 * exact.makespan
        assert exact.makespan == exhaustive_schedule(triples, m) == dispatch_enumeration(triples, m)
        assert carriers(exact) == {j: k for j, k, _ in triples}

    @pytest.mark.parametrize("seed", range(40))
    def test_seven_missions_four_drones(self, seed):
        """Larger mission sets match the dispatch-order enumeration"""
        rng = np.random.default_rng(4000 + seed)
        m = int(rng.integers(2, 5))
        triples = random_missions(rng, 7, m)
        ms = mission_set(triples, m)
        exact = schedule_exact(ms)
        assert exact.proven
        assert exact.makespan == dispatch_enumeration(triples, m)
        assert drone_lb(ms).value <= exact.makespan <= schedule_greedy(ms).makespan

    @pytest.mark.parametrize("seed", range(20))
    def test_permutation_invariant(self, seed):
        """The optimum does not depend on the input order"""
        rng = np.random.default_rng(2000 + seed)
        triples = random_missions(rng, 7, 3)
        forward = schedule_exact(mission_set(triples, 3))
        backward = schedule_exact(mission_set(triples[::-1], 3))
        assert forward.makespan == backward.makespan
        assert forward.sequences == backward.sequences

    @pytest.mark.parametrize("seed", range(20))
    def test_more_drones_never_hurt(self, seed):
        """Doubling the fleet never increases the optimum"""
        rng = np.random.default_rng(3000 + seed)
        m = int(rng.integers(1, 4))
        triples = random_missions(rng, 6, m)
        assert schedule_exact(mission_set(triples, 2 * m)).makespan <= schedule_exact(mission_set(triples, m)).makespan

    @pytest.mark.parametrize("seed", range(30))
    def test_memoised_dispatch_oracle(self, seed):
        """The memoised dispatch search used for enumeration agrees with the plain one and the scheduler"""
        rng = np.random.default_rng(5000 + seed)
        m = int(rng.integers(1, 4))
        triples = random_missions(rng, int(rng.integers(0, 7)), m)
        pairs = [(k, tau) for _, k, tau in triples]
        assert dispatch_optimum(pairs, m) == dispatch_enumeration(triples, m)
        assert dispatch_optimum(pairs, m) == schedule_exact(mission_set(triples, m)).makespan
