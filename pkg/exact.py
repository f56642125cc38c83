"""
Exact solving at desk scale.

TourTable runs Held-Karp once over every subset of a customer list and
FleetTours turns it into min-max partitions over s trucks. solve_exact
branches over the service choice of every drone-eligible customer (truck, or
a drone group of size k) and evaluates leaves with the optimal tour partition
of the truck customers and the exact drone schedule of the missions.
"""
import logging
import time
from dataclasses import dataclass, field, fields
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from heuristic import SearchConfig, TraceEntry, best_found_ms, construct, ruin_recreate
from instance import DEPOT, Instance, Time, time_to_json
from scheduler import DronePlan, MissionSet, schedule_exact, schedule_greedy
from solution import Solution, makespan, solution_from_tours

logger = logging.getLogger(__name__)

HELD_KARP_CAP = 18
MINMAX_CAP = 14
PROOF_CAP = 16
_UNREACHED = np.iinfo(np.int64).max // 4


class SizeCapError(ValueError):
    """Raised when a subset is too large for the exact tour routines"""


class MalformedSolutionError(ValueError):
    """Raised when an arc set is not a union of vertex-disjoint circuits"""


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class SolveOutcome:
    status: SolveStatus
    lb: Optional[Time]
    ub: Optional[Time]
    incumbent: Optional[Solution] = None
    stats: Dict[str, int] = field(default_factory=lambda: {
        'nodes': 0, 'time_ms': 0, 'best_ms': 0, 'prunes_by_va': 0, 'prunes_by_incumbent': 0})

    def to_dict(self, instance: Instance) -> Dict[str, Any]:
        return {
            'instance': instance.name,
            's': instance.s,
            'm': instance.m,
            'status': self.status.value,
            'lb': None if self.lb is None else time_to_json(self.lb),
            'ub': None if self.ub is None else time_to_json(self.ub),
            'time_ms': self.stats['time_ms'],
            'best_ms': self.stats.get('best_ms'),
            'nodes': self.stats['nodes'],
        }


@dataclass(frozen=True)
class ExactBudget:
    node_limit: int = 5000000
    time_limit_ms: Optional[int] = 600000
    max_customers: int = PROOF_CAP
    warm_start_iterations: int = 200
    seed: int = 0
    exact_cap: int = 14
    scheduler_node_limit: int = 200000

    def __post_init__(self):
        if self.node_limit < 1 or self.max_customers < 0 or self.warm_start_iterations < 0:
            raise ValueError("node_limit must be positive, max_customers and warm start non-negative")
        if self.time_limit_ms is not None and self.time_limit_ms < 0:
            raise ValueError("time_limit_ms must be non-negative")
        if self.max_customers > HELD_KARP_CAP:
            raise ValueError(f"max_customers cannot exceed the tour table cap of {HELD_KARP_CAP}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], **overrides) -> "ExactBudget":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in dict(data).items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class ArcSet:
    """Arcs (i, j) with w^k_ij = 1 of one truck k"""
    truck: int
    arcs: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        arcs = tuple((int(i), int(j)) for i, j in self.arcs)
        if len(set(arcs)) != len(arcs):
            raise MalformedSolutionError(f"truck {self.truck}: repeated arcs")
        object.__setattr__(self, 'arcs', arcs)


def _to_time(value: int, denominator: int) -> Time:
    value = Fraction(int(value), denominator)
    return int(value) if value.denominator == 1 else value


def _check_customers(instance: Instance, subset: Iterable[int]) -> List[int]:
    subset = sorted(set(subset))
    for j in subset:
        if not 1 <= j <= instance.n:
            raise ValueError(f"{j} is not a customer of {instance.name}")
    return subset


class TourTable:
    """
    Optimal closed-tour lengths (depot at both ends) for every subset of a
    customer list, from one vectorised Held-Karp pass.

    dp[mask, j] is the shortest depot path visiting the customers of mask and
    ending at customer j; each popcount layer extends all masks at once.
    """

    def __init__(self, instance: Instance, customers: Sequence[int]):
        customers = list(customers)
        if len(customers) > HELD_KARP_CAP:
            raise SizeCapError(f"{len(customers)} customers exceed the Held-Karp cap of {HELD_KARP_CAP}")
        self.customers = tuple(customers)
        self.index = {j: b for b, j in enumerate(customers)}
        self.size = len(customers)
        matrix, self.denominator = instance.scaled_truck_matrix()
        nodes = [DEPOT] + customers
        dist = matrix[np.ix_(nodes, nodes)]

        c = self.size
        full = 1 << c
        if c == 0:
            self._dp = np.zeros((1, 1), dtype=np.int64)
            self._parent = np.full((1, 1), -1, dtype=np.int8)
            self._closing = np.zeros(1, dtype=np.int64)
            self.lengths = np.zeros(1, dtype=np.int64)
            return

        dp = np.full((full, c), _UNREACHED, dtype=np.int64)
        parent = np.full((full, c), -1, dtype=np.int8)
        masks = np.arange(full, dtype=np.int64)
        popcount = np.zeros(full, dtype=np.int64)
        for b in range(c):
            popcount += (masks >> b) & 1
            dp[1 << b, b] = dist[0, b + 1]
        into = dist[1:, 1:]
        for r in range(1, c):
            layer = masks[popcount == r]
            for j in range(c):
                sources = layer[((layer >> j) & 1) == 0]
                if sources.size == 0:
                    continue
                candidates = dp[sources] + into[:, j][None, :]
                best = np.argmin(candidates, axis=1)
                targets = sources | (1 << j)
                dp[targets, j] = candidates[np.arange(sources.size), best]
                parent[targets, j] = best

        self._dp = dp
        self._parent = parent
        self._closing = dist[1:, 0]
        self.lengths = (dp + self._closing[None, :]).min(axis=1)
        self.lengths[0] = 0

    def mask(self, subset: Iterable[int]) -> int:
        mask = 0
        for j in subset:
            mask |= 1 << self.index[j]
        return mask

    def length(self, subset: Iterable[int]) -> Time:
        return _to_time(self.lengths[self.mask(subset)], self.denominator)

    def tour(self, mask: int) -> Tuple[int, ...]:
        """Customer order of an optimal tour over the customers in mask"""
        if mask == 0:
            return ()
        j = int(np.argmin(self._dp[mask] + self._closing))
        order = []
        while mask:
            order.append(self.customers[j])
            previous = int(self._parent[mask, j])
            mask ^= 1 << j
            j = previous
        return tuple(reversed(order))


class FleetTours:
    """
    Min-max partition into at most s tours, over the subsets of a TourTable

    g_1 = tour length; g_r(mask) = min over sub-masks A holding the lowest
    customer of mask of max(g_1(A), g_{r-1}(mask \\ A)). Queries for r = s are
    memoised per mask; lower levels are materialised for all masks when s > 2.
    """

    def __init__(self, table: TourTable, s: int):
        if s < 1:
            raise ValueError(f"truck count must be positive, got {s}")
        self.table = table
        self.s = s
        self._levels: Dict[int, np.ndarray] = {1: table.lengths}
        self._memo: Dict[Tuple[int, int], Tuple[int, int]] = {}

    def _submasks(self, mask: int) -> np.ndarray:
        bits = [b for b in range(self.table.size) if mask >> b & 1]
        low, rest = bits[0], bits[1:]
        idx = np.arange(1 << len(rest), dtype=np.int64)
        subs = np.full(idx.size, 1 << low, dtype=np.int64)
        for t, b in enumerate(rest):
            subs |= ((idx >> t) & 1) << b
        return subs

    def _level(self, r: int) -> np.ndarray:
        if r not in self._levels:
            below = self._level(r - 1)
            level = np.zeros(1 << self.table.size, dtype=np.int64)
            for mask in range(1, level.size):
                subs = self._submasks(mask)
                level[mask] = np.maximum(self.table.lengths[subs], below[mask ^ subs]).min()
            self._levels[r] = level
        return self._levels[r]

    def _solve(self, mask: int, r: int) -> Tuple[int, int]:
        """(g_r(mask), first tour mask of an optimal partition)"""
        if mask == 0:
            return 0, 0
        if r == 1:
            return int(self.table.lengths[mask]), mask
        key = (r, mask)
        if key not in self._memo:
            subs = self._submasks(mask)
            values = np.maximum(self.table.lengths[subs], self._level(r - 1)[mask ^ subs])
            i = int(np.argmin(values))
            self._memo[key] = (int(values[i]), int(subs[i]))
        return self._memo[key]

    def scaled_value(self, mask: int) -> int:
        return self._solve(mask, self.s)[0]

    def value(self, subset: Iterable[int]) -> Time:
        return _to_time(self.scaled_value(self.table.mask(subset)), self.table.denominator)

    def partition(self, mask: int) -> List[Tuple[int, ...]]:
        tours = []
        r = self.s
        while mask:
            _, first = self._solve(mask, r)
            tours.append(self.table.tour(first))
            mask ^= first
            r -= 1
        return tours


def held_karp(instance: Instance, subset: Iterable[int]) -> Time:
    """
    Optimal closed-tour duration through the depot and a customer subset

    Args:
        instance: problem instance
        subset: at most 18 customers

    Returns:
        Minutes (exact)
    """
    subset = _check_customers(instance, subset)
    table = TourTable(instance, subset)
    return table.length(subset)


def minmax_tours(instance: Instance, subset: Iterable[int], s: int) -> Tuple[List[Tuple[int, ...]], Time]:
    """
    Partition a customer subset into at most s tours minimising the longest

    Args:
        instance: problem instance
        subset: customers to route (at most 14 when s >= 2)
        s: number of trucks

    Returns:
        (tours, longest tour duration)
    """
    subset = _check_customers(instance, subset)
    if s >= 2 and len(subset) > MINMAX_CAP:
        raise SizeCapError(f"{len(subset)} customers exceed the min-max cap of {MINMAX_CAP}")
    table = TourTable(instance, subset)
    fleet = FleetTours(table, s)
    full = table.mask(subset)
    return fleet.partition(full), _to_time(fleet.scaled_value(full), table.denominator)


@dataclass(frozen=True)
class BoundReport:
    """Root lower bound and where it comes from"""
    va: Time
    longest_mission: Time
    truck: Time
    customer_floor: Time
    forced: Tuple[int, ...] = ()

    @property
    def value(self) -> Time:
        return max(self.va, self.longest_mission, self.truck, self.customer_floor)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'va': time_to_json(self.va),
            'longest_mission': time_to_json(self.longest_mission),
            'truck': time_to_json(self.truck),
            'customer_floor': time_to_json(self.customer_floor),
            'forced': list(self.forced),
            'value': time_to_json(self.value),
        }


def _drone_floor(m: int, work: int, tau: int) -> int:
    return max(-(-work // m), tau)


def root_bounds(instance: Instance, ub: Optional[Time] = None,
                fleet: Optional[FleetTours] = None) -> BoundReport:
    """
    Lower bounds at the root of the search

    A drone-eligible customer is drone-forced when serving it by truck alone
    already costs at least ub; the fleet-work bound then applies to the
    cheapest missions of the forced customers. The customer floor is the
    largest, over customers, of the cheaper of the two ways to serve it.

    Args:
        instance: problem instance
        ub: known solution value; enables drone-forced customers
        fleet: min-max tour oracle over all customers (built when n <= 16)

    Returns:
        BoundReport in minutes; when ub is given only min(value, ub) is a valid bound
    """
    if fleet is None and instance.n <= PROOF_CAP:
        fleet = FleetTours(TourTable(instance, list(instance.customers)), instance.s)
    matrix, scale = instance.scaled_truck_matrix()
    truck_only = instance.truck_only_customers

    def truck_bound(extra: Optional[int] = None) -> int:
        members = list(truck_only) + ([extra] if extra is not None else [])
        if fleet is not None:
            return fleet.scaled_value(fleet.table.mask(members))
        return max((int(matrix[0, j] + matrix[j, 0]) for j in members), default=0)

    truck = truck_bound()
    ub_scaled = None if ub is None else int(Fraction(ub) * scale)
    forced: List[int] = []
    floor = truck
    for j in instance.drone_customers:
        by_truck = truck_bound(j)
        by_drone = min(_drone_floor(instance.m, k * instance.drone_time[(j, k)], instance.drone_time[(j, k)])
                       for k in instance.group_sizes(j)) * scale
        floor = max(floor, min(by_truck, by_drone))
        if ub_scaled is not None and by_truck >= ub_scaled:
            forced.append(j)

    work = sum(min(k * instance.drone_time[(j, k)] for k in instance.group_sizes(j)) for j in forced)
    longest = max((min(instance.drone_time[(j, k)] for k in instance.group_sizes(j)) for j in forced), default=0)
    return BoundReport(
        va=-(-work // instance.m),
        longest_mission=longest,
        truck=_to_time(truck, scale),
        customer_floor=_to_time(floor, scale),
        forced=tuple(forced),
    )


class _BranchAndBound:
    """Depth-first search over service choices in scaled integer time"""

    def __init__(self, instance: Instance, budget: ExactBudget, fleet: FleetTours, ub: int, started: float):
        self.instance = instance
        self.budget = budget
        self.fleet = fleet
        self.table = fleet.table
        self.scale = self.table.denominator
        self.m = instance.m
        self.ub = ub
        self.best: Optional[Tuple[int, Dict[int, int]]] = None
        self.order = sorted(instance.drone_customers, key=lambda j: (-instance.max_work(j), j))
        self.options = {j: [(k, instance.drone_time[(j, k)]) for k in instance.group_sizes(j)] for j in self.order}
        self.leaf_cache: Dict[Tuple[Tuple[int, int], ...], Tuple[int, bool]] = {}
        self.stats = {'nodes': 0, 'time_ms': 0, 'best_ms': 0, 'prunes_by_va': 0, 'prunes_by_incumbent': 0}
        self.exhausted = False
        self.proof_lost = False
        self.started = started
        self.deadline = None if budget.time_limit_ms is None else started + budget.time_limit_ms / 1000.0

    def _drone_bound(self, work: int, longest: int) -> int:
        return max(-(-work // self.m), longest) * self.scale

    def _floor(self, depth: int, mask: int, work: int) -> int:
        floor = 0
        for j in self.order[depth:]:
            by_truck = self.fleet.scaled_value(mask | 1 << self.table.index[j])
            by_drone = min(_drone_floor(self.m, work + k * tau, tau) for k, tau in self.options[j]) * self.scale
            floor = max(floor, min(by_truck, by_drone))
            if floor >= self.ub:
                break
        return floor

    def _schedule(self, missions: Dict[int, int]) -> DronePlan:
        ms = MissionSet.from_assignment(self.instance, missions)
        if len(ms) > self.budget.exact_cap:
            return schedule_greedy(ms)
        return schedule_exact(ms, limit=self.budget.scheduler_node_limit, cap=self.budget.exact_cap)

    def _leaf(self, mask: int, missions: Dict[int, int], truck: int) -> None:
        key = tuple(sorted((k, self.instance.drone_time[(j, k)]) for j, k in missions.items()))
        if key not in self.leaf_cache:
            plan = self._schedule(missions)
            self.leaf_cache[key] = (plan.makespan * self.scale, plan.proven)
        drone, proven = self.leaf_cache[key]
        if not proven:
            self.proof_lost = True
        value = max(truck, drone)
        if value < self.ub:
            self.ub = value
            self.best = (mask, dict(missions))
            self.stats['best_ms'] = int((time.perf_counter() - self.started) * 1000)
            logger.debug(f"New incumbent {_to_time(value, self.scale)} after {self.stats['nodes']} nodes")

    def visit(self, depth: int, mask: int, missions: Dict[int, int], work: int, longest: int) -> None:
        if self.exhausted:
            return
        self.stats['nodes'] += 1
        if self.stats['nodes'] > self.budget.node_limit or \
                (self.deadline is not None and time.perf_counter() > self.deadline):
            self.exhausted = True
            return

        drone = self._drone_bound(work, longest)
        if drone >= self.ub:
            self.stats['prunes_by_va'] += 1
            return
        truck = self.fleet.scaled_value(mask)
        bound = max(drone, truck)
        if bound < self.ub and depth < len(self.order):
            bound = max(bound, self._floor(depth, mask, work))
        if bound >= self.ub:
            self.stats['prunes_by_incumbent'] += 1
            return
        if depth == len(self.order):
            self._leaf(mask, missions, truck)
            return

        j = self.order[depth]
        bit = 1 << self.table.index[j]
        children = [(self.fleet.scaled_value(mask | bit), 0, 0)]
        for k, tau in self.options[j]:
            children.append((max(self._drone_bound(work + k * tau, max(longest, tau)), truck), k, tau))
        for _, k, tau in sorted(children):
            if k == 0:
                self.visit(depth + 1, mask | bit, missions, work, longest)
            else:
                missions[j] = k
                self.visit(depth + 1, mask, missions, work + k * tau, max(longest, tau))
                del missions[j]

    def incumbent(self) -> Optional[Solution]:
        if self.best is None:
            return None
        mask, missions = self.best
        tours = self.fleet.partition(mask)
        if not missions:
            return solution_from_tours(tours)
        return solution_from_tours(tours, self._schedule(missions))


def solve_exact(instance: Instance, budget: Optional[ExactBudget] = None, depot_ready: Time = 0) -> SolveOutcome:
    """
    Branch-and-bound over the service choice of every customer

    Every vehicle leaves the depot at depot_ready, so the search runs from
    time 0 and both bounds are shifted by it at the end.

    Args:
        instance: problem instance
        budget: node/time limits, proof cap and warm start settings
        depot_ready: availability time of every vehicle at the depot (T_0)

    Returns:
        SolveOutcome; status optimal means lb == ub with a proven incumbent,
        budget_exhausted means a limit (nodes, time or the proof cap) left a gap
    """
    budget = budget or ExactBudget()
    started = time.perf_counter()
    warm_cfg = SearchConfig(iterations=budget.warm_start_iterations, seed=budget.seed)
    start = construct(instance, warm_cfg)
    constructed_ms = int((time.perf_counter() - started) * 1000)
    trace: List[TraceEntry] = []
    incumbent = ruin_recreate(instance, start, warm_cfg, trace)
    ub = makespan(instance, incumbent)
    warm_ms = best_found_ms(trace, ub, makespan(instance, start), constructed_ms)

    if instance.n > budget.max_customers:
        report = root_bounds(instance, ub=ub)
        lb = min(report.value, ub)
        status = SolveStatus.OPTIMAL if lb == ub else SolveStatus.BUDGET_EXHAUSTED
        stats = {'nodes': 0, 'time_ms': int((time.perf_counter() - started) * 1000), 'best_ms': warm_ms,
                 'prunes_by_va': 0, 'prunes_by_incumbent': 0}
        logger.warning(f"{instance.name}: n={instance.n} exceeds the proof cap of {budget.max_customers}, "
                       f"reporting heuristic bounds [{lb}, {ub}]")
        return SolveOutcome(status, depot_ready + lb, depot_ready + ub, incumbent, stats)

    fleet = FleetTours(TourTable(instance, list(instance.customers)), instance.s)
    report = root_bounds(instance, ub=ub, fleet=fleet)
    search = _BranchAndBound(instance, budget, fleet, int(Fraction(ub) * fleet.table.denominator), started)
    search.stats['best_ms'] = warm_ms
    search.visit(0, fleet.table.mask(instance.truck_only_customers), {}, 0, 0)

    improved = search.incumbent()
    if improved is not None:
        incumbent = improved
        ub = makespan(instance, incumbent)
    complete = not search.exhausted and not search.proof_lost
    lb = ub if complete else min(report.value, ub)
    if lb == ub:
        status = SolveStatus.OPTIMAL
    elif search.exhausted:
        status = SolveStatus.BUDGET_EXHAUSTED
    else:
        status = SolveStatus.FEASIBLE
    search.stats['time_ms'] = int((time.perf_counter() - started) * 1000)
    lb, ub = depot_ready + lb, depot_ready + ub
    logger.info(f"Exact solve of {instance.name} (s={instance.s}, m={instance.m}): status={status.value}, "
                f"lb={lb}, ub={ub}, nodes={search.stats['nodes']}")
    return SolveOutcome(status, lb, ub, incumbent, dict(search.stats))


def separate_subtours(arcs: ArcSet) -> List[FrozenSet[int]]:
    """
    Vertex sets of the circuits that miss the depot

    Args:
        arcs: integer arc set of one truck; every vertex needs equal in- and
            out-degree of at most 1

    Returns:
        Disjoint customer sets ordered by smallest member; empty iff the arcs
        form one depot circuit or nothing
    """
    graph = nx.DiGraph()
    graph.add_edges_from(arcs.arcs)
    for v in graph.nodes:
        indeg, outdeg = graph.in_degree(v), graph.out_degree(v)
        if indeg > 1 or outdeg > 1 or indeg != outdeg:
            raise MalformedSolutionError(
                f"truck {arcs.truck}: vertex {v} has in-degree {indeg} and out-degree {outdeg}")
    components = [frozenset(c) for c in nx.weakly_connected_components(graph) if DEPOT not in c]
    return sorted(components, key=min)
