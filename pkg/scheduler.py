"""
Drone mission scheduling for a fixed assignment of customers to group sizes.

Every schedule is built by dispatching missions in some order, each one to
the k drones that become free first (lowest drone id on ties); the mission
starts when the last of them is back. Enumerating dispatch orders with this
rule reaches an optimal schedule, so the exact scheduler branches over orders
only, with drone availabilities kept as a sorted multiset.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from instance import Instance, Time

logger = logging.getLogger(__name__)

DEFAULT_EXACT_CAP = 14
DEFAULT_NODE_LIMIT = 200000


class InfeasibleMissionError(ValueError):
    """Raised when a mission needs more drones than the fleet has"""


class CapExceededError(ValueError):
    """Raised when a mission set is too large for the exact scheduler"""


@dataclass(frozen=True)
class Mission:
    customer: int
    k: int
    tau: int

    @property
    def work(self) -> int:
        return self.k * self.tau


@dataclass(frozen=True)
class MissionSet:
    missions: Tuple[Mission, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, 'missions', tuple(self.missions))
        if self.m < 1:
            raise ValueError(f"drone count must be positive, got {self.m}")
        for mission in self.missions:
            if mission.k < 1 or mission.tau < 1:
                raise ValueError(f"mission {mission.customer}: k and tau must be positive")

    def __len__(self) -> int:
        return len(self.missions)

    @classmethod
    def from_assignment(cls, instance: Instance, missions: Mapping[int, int],
                        m: Optional[int] = None) -> "MissionSet":
        """Build the mission set of a customer -> group size assignment"""
        return cls(
            missions=tuple(Mission(j, k, instance.drone_time[(j, k)]) for j, k in sorted(missions.items())),
            m=instance.m if m is None else m,
        )


@dataclass(frozen=True)
class DroneBound:
    """Components of the fleet-work bound m * alpha >= sum k * tau"""
    work: int
    m: int
    va: int
    longest: int

    @property
    def value(self) -> int:
        return max(self.va, self.longest)


@dataclass(frozen=True)
class DronePlan:
    sequences: Tuple[Tuple[int, ...], ...]
    completion: Dict[int, Time]
    makespan: Time
    proven: bool = False
    nodes: int = 0
    missions: Dict[int, int] = field(default_factory=dict)


def drone_lb(ms: MissionSet) -> DroneBound:
    """
    Valid-inequality bound on the drone makespan

    Returns:
        DroneBound with work = sum k*tau, va = ceil(work / m), longest = max tau;
        the reported bound is DroneBound.value
    """
    work = sum(mission.work for mission in ms.missions)
    longest = max((mission.tau for mission in ms.missions), default=0)
    return DroneBound(work=work, m=ms.m, va=-(-work // ms.m), longest=longest)


def _check_fleet(ms: MissionSet) -> None:
    for mission in ms.missions:
        if mission.k > ms.m:
            raise InfeasibleMissionError(
                f"mission {mission.customer} needs {mission.k} drones, fleet has {ms.m}")


def dispatch(order: Sequence[Mission], m: int, ready: Time = 0) -> DronePlan:
    """Replay a dispatch order: each mission goes to the k earliest-available drones"""
    avail: List[Time] = [ready] * m
    sequences: List[List[int]] = [[] for _ in range(m)]
    completion: Dict[int, Time] = {}
    for mission in order:
        if mission.k > m:
            raise InfeasibleMissionError(
                f"mission {mission.customer} needs {mission.k} drones, fleet has {m}")
        drones = sorted(range(m), key=lambda d: (avail[d], d))[:mission.k]
        end = max(avail[d] for d in drones) + mission.tau
        for d in drones:
            avail[d] = end
            sequences[d].append(mission.customer)
        completion[mission.customer] = end
    return DronePlan(
        sequences=tuple(tuple(seq) for seq in sequences),
        completion=completion,
        makespan=max(avail) if completion else ready,
        missions={mission.customer: mission.k for mission in order},
    )


def greedy_order(ms: MissionSet) -> List[Mission]:
    """Largest drone work k*tau first, ties by customer id"""
    return sorted(ms.missions, key=lambda mission: (-mission.work, mission.customer))


def schedule_greedy(ms: MissionSet, ready: Time = 0) -> DronePlan:
    """
    List scheduling in greedy_order

    Args:
        ms: missions and fleet size
        ready: depot availability of every drone

    Returns:
        DronePlan with one (possibly empty) sequence per drone
    """
    _check_fleet(ms)
    plan = dispatch(greedy_order(ms), ms.m, ready)
    return DronePlan(plan.sequences, plan.completion, plan.makespan, proven=len(ms) <= 1,
                     missions=plan.missions)


class _OrderSearch:
    """Depth-first search over dispatch orders with multiset dominance"""

    def __init__(self, missions: Sequence[Mission], m: int, ready: Time, limit: int):
        # Canonical order makes the result independent of the input list order
        self.missions = sorted(missions, key=lambda x: (x.k, x.tau, x.customer))
        self.m = m
        self.limit = limit
        self.nodes = 0
        self.exhausted = False
        self.full = (1 << len(self.missions)) - 1
        self.twin = [i > 0 and (self.missions[i - 1].k, self.missions[i - 1].tau)
                     == (self.missions[i].k, self.missions[i].tau) for i in range(len(self.missions))]
        self.branch_order = sorted(range(len(self.missions)),
                                   key=lambda i: (-self.missions[i].work, i))
        self.seen: Dict[int, List[Tuple[Time, ...]]] = {}
        self.best_value: Optional[Time] = None
        self.best_order: List[int] = []
        self.ready = ready
        self.integral = Fraction(ready).denominator == 1

    def _lower_bound(self, mask: int, avail: Tuple[Time, ...]) -> Time:
        remaining = [self.missions[i] for i in range(len(self.missions)) if not mask >> i & 1]
        total = Fraction(sum(avail) + sum(x.work for x in remaining))
        # Rounding up is only valid while every time is integral
        average = math.ceil(total / self.m) if self.integral else total / self.m
        bound = max(avail[-1], average)
        for x in remaining:
            bound = max(bound, avail[x.k - 1] + x.tau)
        return bound

    def _dominated(self, mask: int, avail: Tuple[Time, ...]) -> bool:
        seen = self.seen.setdefault(mask, [])
        for other in seen:
            if all(a <= b for a, b in zip(other, avail)):
                return True
        seen.append(avail)
        return False

    def run(self, ub: Time, ub_order: List[int]) -> None:
        self.best_value, self.best_order = ub, ub_order
        self._visit(0, tuple([self.ready] * self.m), [])

    def _visit(self, mask: int, avail: Tuple[Time, ...], order: List[int]) -> None:
        if self.exhausted:
            return
        self.nodes += 1
        if self.nodes > self.limit:
            self.exhausted = True
            return
        if mask == self.full:
            if avail[-1] < self.best_value:
                self.best_value, self.best_order = avail[-1], list(order)
            return
        if self._lower_bound(mask, avail) >= self.best_value or self._dominated(mask, avail):
            return
        for i in self.branch_order:
            if mask >> i & 1 or (self.twin[i] and not mask >> (i - 1) & 1):
                continue
            x = self.missions[i]
            end = avail[x.k - 1] + x.tau
            child = tuple(sorted(avail[x.k:] + (end,) * x.k))
            order.append(i)
            self._visit(mask | 1 << i, child, order)
            order.pop()


def schedule_exact(ms: MissionSet, limit: int = DEFAULT_NODE_LIMIT,
                   cap: int = DEFAULT_EXACT_CAP, ready: Time = 0) -> DronePlan:
    """
    Minimum-makespan drone schedule

    Args:
        ms: missions and fleet size
        limit: node budget of the search
        cap: largest accepted number of missions
        ready: depot availability of every drone

    Returns:
        DronePlan; proven is True when the search finished within the budget
    """
    if len(ms) > cap:
        raise CapExceededError(f"{len(ms)} missions exceed the exact scheduler cap of {cap}")
    _check_fleet(ms)
    greedy = schedule_greedy(ms, ready)
    if len(ms) <= 1:
        return DronePlan(greedy.sequences, greedy.completion, greedy.makespan, proven=True,
                         nodes=1, missions=greedy.missions)

    search = _OrderSearch(ms.missions, ms.m, ready, limit)
    position = {x.customer: i for i, x in enumerate(search.missions)}
    search.run(greedy.makespan, [position[x.customer] for x in greedy_order(ms)])
    plan = dispatch([search.missions[i] for i in search.best_order], ms.m, ready)
    if search.exhausted:
        logger.debug(f"Exact scheduler stopped after {search.nodes} nodes, best {plan.makespan}")
    return DronePlan(plan.sequences, plan.completion, plan.makespan, proven=not search.exhausted,
                     nodes=search.nodes, missions=plan.missions)
