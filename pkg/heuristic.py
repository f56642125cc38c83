"""
Construction heuristic and ruin & recreate improvement.

One improvement iteration applies this move set to a copy of the current
solution:
  * ruin: remove ceil(ruin_fraction * n) customers, half drawn at random and
    the rest taken from the worst contributors (largest detour saving in a
    tour, largest drone work k * tau for a mission);
  * recreate: reinsert them one at a time, truck-only customers first, at the
    option with the least resulting makespan (cheapest position in any tour,
    or a drone mission with any feasible group size);
  * group-size change: each reinserted drone customer tries its other group sizes;
  * 2-opt on every tour the iteration touched;
  * exact drone re-scheduling when the mission set is small.
The candidate replaces the current solution when its makespan is lower, or
equal with a total work (tour lengths plus drone work) of at most
(1 + sideways_tolerance) times the current one.

All arithmetic runs on the exact integer scaling of the truck matrix.
"""
import logging
import math
import time
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from instance import DEPOT, Instance, Time
from scheduler import DronePlan, MissionSet, schedule_exact, schedule_greedy
from solution import InfeasibleSolutionError, Solution, check, makespan, solution_from_tours

logger = logging.getLogger(__name__)


class SearchConfigError(ValueError):
    """Raised for out-of-range search parameters"""


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 500
    ruin_fraction: float = 0.3
    seed: int = 0
    time_limit_ms: Optional[int] = None
    sideways_tolerance: float = 0.0
    # Mission sets up to this size are scheduled exactly
    exact_schedule_cap: int = 8
    scheduler_node_limit: int = 20000

    def __post_init__(self):
        if self.iterations < 0:
            raise SearchConfigError(f"iterations must be non-negative, got {self.iterations}")
        if not 0.0 < self.ruin_fraction < 1.0:
            raise SearchConfigError(f"ruin_fraction must lie in (0, 1), got {self.ruin_fraction}")
        if not 0 <= self.seed < 2 ** 64:
            raise SearchConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.time_limit_ms is not None and self.time_limit_ms < 0:
            raise SearchConfigError("time_limit_ms must be non-negative")
        if self.sideways_tolerance < 0:
            raise SearchConfigError("sideways_tolerance must be non-negative")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], **overrides) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in dict(data).items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class TraceEntry:
    """One accepted iteration: current and best makespan after it"""
    iteration: int
    current: Time
    best: Time
    elapsed_ms: int = 0


@dataclass
class _State:
    tours: List[List[int]]
    missions: Dict[int, int]

    def copy(self) -> "_State":
        return _State([list(t) for t in self.tours], dict(self.missions))


class _Search:
    """Scaled-integer evaluation and moves shared by construct and ruin_recreate"""

    def __init__(self, instance: Instance, cfg: SearchConfig):
        self.instance = instance
        self.cfg = cfg
        matrix, self.scale = instance.scaled_truck_matrix()
        self.d = matrix.tolist()
        self._plans: Dict[Tuple[Tuple[int, int], ...], DronePlan] = {}

    def to_time(self, value: int) -> Time:
        value = Fraction(value, self.scale)
        return int(value) if value.denominator == 1 else value

    def tour_length(self, tour: Sequence[int]) -> int:
        if not tour:
            return 0
        path = [DEPOT] + list(tour) + [DEPOT]
        return sum(self.d[a][b] for a, b in zip(path, path[1:]))

    def mission_set(self, missions: Mapping[int, int]) -> MissionSet:
        return MissionSet.from_assignment(self.instance, missions)

    def greedy_drone(self, missions: Mapping[int, int]) -> int:
        return schedule_greedy(self.mission_set(missions)).makespan * self.scale

    def plan(self, missions: Mapping[int, int]) -> DronePlan:
        ms = self.mission_set(missions)
        if len(ms) > self.cfg.exact_schedule_cap:
            return schedule_greedy(ms)
        key = tuple(sorted(missions.items()))
        if key not in self._plans:
            self._plans[key] = schedule_exact(ms, limit=self.cfg.scheduler_node_limit,
                                              cap=self.cfg.exact_schedule_cap)
        return self._plans[key]

    def work(self, state: _State) -> int:
        drone = sum(k * self.instance.drone_time[(j, k)] for j, k in state.missions.items())
        return sum(self.tour_length(t) for t in state.tours) + drone * self.scale

    def score(self, state: _State) -> Tuple[int, int]:
        truck = max((self.tour_length(t) for t in state.tours), default=0)
        drone = self.plan(state.missions).makespan * self.scale
        return max(truck, drone), self.work(state)

    def best_insertion(self, tours: List[List[int]], j: int) -> Tuple[int, int, int, int]:
        """(resulting truck makespan, detour, tour index, position) of the cheapest insertion"""
        lengths = [self.tour_length(t) for t in tours]
        current = max(lengths, default=0)
        best = None
        for ti, tour in enumerate(tours):
            path = [DEPOT] + tour + [DEPOT]
            for pos in range(len(tour) + 1):
                a, b = path[pos], path[pos + 1]
                delta = self.d[a][j] + self.d[j][b] - self.d[a][b]
                key = (max(current, lengths[ti] + delta), delta, ti, pos)
                if best is None or key < best:
                    best = key
        return best

    def insert(self, state: _State, j: int) -> Optional[int]:
        """
        Place customer j at the option with the least resulting makespan

        Returns:
            Index of the tour that received j, or None when j became a drone mission
        """
        truck_ms, delta, ti, pos = self.best_insertion(state.tours, j)
        truck_now = max((self.tour_length(t) for t in state.tours), default=0)
        drone_now = self.greedy_drone(state.missions)
        # (makespan, added work, option rank, group size)
        best = (max(truck_ms, drone_now), delta, 0, 0)
        for k in self.instance.group_sizes(j):
            trial = dict(state.missions)
            trial[j] = k
            value = max(truck_now, self.greedy_drone(trial))
            option = (value, k * self.instance.drone_time[(j, k)] * self.scale, 1, k)
            if option < best:
                best = option
        if best[2] == 0:
            state.tours[ti].insert(pos, j)
            return ti
        state.missions[j] = best[3]
        return None

    def change_group_size(self, state: _State, j: int) -> None:
        truck = max((self.tour_length(t) for t in state.tours), default=0)

        def value(k: int) -> Tuple[int, int]:
            trial = dict(state.missions)
            trial[j] = k
            return max(truck, self.greedy_drone(trial)), k * self.instance.drone_time[(j, k)]

        state.missions[j] = min(self.instance.group_sizes(j), key=lambda k: (value(k), k))

    def two_opt(self, tour: List[int]) -> List[int]:
        path = [DEPOT] + list(tour) + [DEPOT]
        length = self.tour_length(tour)
        improved = True
        while improved:
            improved = False
            for a in range(1, len(path) - 2):
                for b in range(a + 1, len(path) - 1):
                    candidate = path[:a] + path[a:b + 1][::-1] + path[b + 1:]
                    candidate_length = self.tour_length(candidate[1:-1])
                    if candidate_length < length:
                        path, length, improved = candidate, candidate_length, True
        return path[1:-1]

    def contributions(self, state: _State) -> Dict[int, int]:
        scores = {}
        for tour in state.tours:
            path = [DEPOT] + tour + [DEPOT]
            for pos in range(1, len(path) - 1):
                a, j, b = path[pos - 1], path[pos], path[pos + 1]
                scores[j] = self.d[a][j] + self.d[j][b] - self.d[a][b]
        for j, k in state.missions.items():
            scores[j] = k * self.instance.drone_time[(j, k)] * self.scale
        return scores

    def ruin(self, state: _State, rng: np.random.Generator) -> Tuple[List[int], set]:
        n = self.instance.n
        count = min(n, max(1, math.ceil(self.cfg.ruin_fraction * n)))
        picked = [int(j) for j in rng.choice(np.arange(1, n + 1), size=(count + 1) // 2, replace=False)]
        scores = self.contributions(state)
        for j in sorted(scores, key=lambda c: (-scores[c], c)):
            if len(picked) >= count:
                break
            if j not in picked:
                picked.append(j)

        touched = set()
        for j in picked:
            if j in state.missions:
                del state.missions[j]
                continue
            for ti, tour in enumerate(state.tours):
                if j in tour:
                    tour.remove(j)
                    touched.add(ti)
        return picked, touched

    def recreate(self, state: _State, removed: Sequence[int], rng: np.random.Generator) -> set:
        truck_only = sorted(j for j in removed if self.instance.eligibility[j].truck_only)
        flexible = [j for j in removed if not self.instance.eligibility[j].truck_only]
        flexible = [flexible[i] for i in rng.permutation(len(flexible))]
        touched = set()
        flown = []
        for j in truck_only + flexible:
            ti = self.insert(state, j)
            if ti is None:
                flown.append(j)
            else:
                touched.add(ti)
        for j in flown:
            self.change_group_size(state, j)
        return touched

    def to_solution(self, state: _State) -> Solution:
        tours = [t for t in state.tours if t]
        if not state.missions:
            return solution_from_tours(tours)
        return solution_from_tours(tours, self.plan(state.missions))

    @staticmethod
    def from_solution(sol: Solution, s: int) -> _State:
        tours = [list(t) for t in sol.tours]
        tours += [[] for _ in range(s - len(tours))]
        return _State(tours, dict(sol.missions))


def construct(instance: Instance, cfg: Optional[SearchConfig] = None) -> Solution:
    """
    Build a feasible solution from scratch

    Truck-only customers go in by cheapest insertion (id order); drone-eligible
    customers follow in decreasing order of their shortest mission time, each
    taking the truck insertion or drone group size with the least resulting
    makespan.

    Args:
        instance: problem instance
        cfg: search parameters (only the scheduling caps are used)

    Returns:
        Checker-clean Solution
    """
    search = _Search(instance, cfg or SearchConfig())
    state = _State([[] for _ in range(instance.s)], {})
    for j in instance.truck_only_customers:
        _, _, ti, pos = search.best_insertion(state.tours, j)
        state.tours[ti].insert(pos, j)
    order = sorted(instance.drone_customers,
                   key=lambda j: (-min(instance.drone_time[(j, k)] for k in instance.group_sizes(j)), j))
    for j in order:
        search.insert(state, j)
    state.tours = [search.two_opt(t) for t in state.tours]
    sol = search.to_solution(state)
    logger.debug(f"Constructed solution for {instance.name}: "
                 f"{len(sol.tours)} tours, {len(sol.missions)} missions")
    return sol


def _accepts(candidate: Tuple[int, int], current: Tuple[int, int], tolerance: float) -> bool:
    if candidate[0] != current[0]:
        return candidate[0] < current[0]
    return candidate[1] <= current[1] * (1.0 + tolerance)


def ruin_recreate(instance: Instance, init: Solution, cfg: Optional[SearchConfig] = None,
                  trace: Optional[List[TraceEntry]] = None) -> Solution:
    """
    Improve a feasible solution by ruin & recreate

    Args:
        instance: problem instance
        init: checker-clean starting solution
        cfg: search parameters
        trace: optional list receiving one TraceEntry per accepted iteration

    Returns:
        The best solution found; init itself when nothing beats its makespan
    """
    cfg = cfg or SearchConfig()
    violations = check(instance, init)
    if violations:
        raise InfeasibleSolutionError(violations)
    if cfg.iterations == 0:
        return init

    search = _Search(instance, cfg)
    init_value = int(Fraction(makespan(instance, init)) * search.scale)
    current = search.from_solution(init, instance.s)
    current_score = search.score(current)
    best, best_score = current.copy(), current_score
    rng = np.random.default_rng(cfg.seed)
    started = time.perf_counter()
    deadline = None if cfg.time_limit_ms is None else started + cfg.time_limit_ms / 1000.0

    for iteration in range(1, cfg.iterations + 1):
        if deadline is not None and time.perf_counter() > deadline:
            logger.debug(f"Ruin & recreate stopped by time limit after {iteration - 1} iterations")
            break
        candidate = current.copy()
        removed, touched = search.ruin(candidate, rng)
        touched |= search.recreate(candidate, removed, rng)
        for ti in sorted(touched):
            candidate.tours[ti] = search.two_opt(candidate.tours[ti])
        score = search.score(candidate)
        if not _accepts(score, current_score, cfg.sideways_tolerance):
            continue
        current, current_score = candidate, score
        if score < best_score:
            best, best_score = candidate.copy(), score
            logger.debug(f"Iteration {iteration}: new best makespan {search.to_time(score[0])}")
        if trace is not None:
            trace.append(TraceEntry(iteration, search.to_time(current_score[0]), search.to_time(best_score[0]),
                                    int((time.perf_counter() - started) * 1000)))

    if best_score[0] >= init_value:
        return init
    return search.to_solution(best)


def best_found_ms(trace: Sequence[TraceEntry], value: Time, start: Time, offset_ms: int = 0) -> int:
    """
    Milliseconds until a search first reached makespan value

    Args:
        trace: entries recorded by ruin_recreate
        value: makespan of the returned solution
        start: makespan of the starting solution
        offset_ms: time spent before ruin_recreate started

    Returns:
        offset_ms when the start already had the value, else offset_ms plus the trace time
    """
    if start <= value:
        return offset_ms
    for entry in trace:
        if entry.best <= value:
            return offset_ms + entry.elapsed_ms
    return offset_ms
