"""
Canonical solution model, feasibility checker and makespan evaluator.

A solution is a set of truck tours (depot implicit at both ends), the group
size chosen for every drone-served customer and, per drone, the ordered list
of missions it flies. Drones return to the depot between missions; the
per-drone order is what the flow variables f_ij of the models express, so no
customer-to-customer drone leg exists.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from instance import DEPOT, Instance, Time, time_to_json

logger = logging.getLogger(__name__)


class ViolationKind(str, Enum):
    COVERAGE = "coverage"
    TRUCK_ONLY = "truck_only"
    K_RANGE = "k_range"
    FLOW_MISMATCH = "flow_mismatch"
    DUPLICATE = "duplicate"
    FLEET_EXCEEDED = "fleet_exceeded"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    subject: str
    detail: str

    def to_dict(self) -> Dict[str, str]:
        return {'kind': self.kind.value, 'subject': self.subject, 'detail': self.detail}


class InfeasibleSolutionError(ValueError):
    """Raised when a solution that must be feasible is not; carries the violations"""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        summary = "; ".join(f"{v.kind.value}({v.subject}): {v.detail}" for v in self.violations[:5])
        super().__init__(f"{len(self.violations)} violation(s): {summary}")


class UnknownCustomerError(ValueError):
    """Raised when a tour references a vertex that is not a customer"""


class SolutionFormatError(ValueError):
    """Raised when solution JSON does not follow the expected structure"""


@dataclass(frozen=True)
class Solution:
    """Truck tours, mission group sizes and per-drone mission sequences"""
    tours: Tuple[Tuple[int, ...], ...] = ()
    missions: Mapping[int, int] = field(default_factory=dict)
    drone_sequences: Tuple[Tuple[int, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'tours', tuple(tuple(t) for t in self.tours if len(t) > 0))
        object.__setattr__(self, 'missions', {int(j): int(k) for j, k in dict(self.missions).items()})
        object.__setattr__(self, 'drone_sequences', tuple(tuple(seq) for seq in self.drone_sequences))

    @property
    def truck_customers(self) -> Tuple[int, ...]:
        return tuple(j for tour in self.tours for j in tour)


@dataclass(frozen=True)
class Timeline:
    mission_start: Dict[int, Time]
    mission_completion: Dict[int, Time]
    truck_return: Tuple[Time, ...]
    drone_available: Tuple[Time, ...]
    makespan: Time

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mission_start': {str(j): time_to_json(t) for j, t in sorted(self.mission_start.items())},
            'mission_completion': {str(j): time_to_json(t) for j, t in sorted(self.mission_completion.items())},
            'truck_return': [time_to_json(t) for t in self.truck_return],
            'drone_available': [time_to_json(t) for t in self.drone_available],
            'makespan': time_to_json(self.makespan),
        }


def tour_duration(instance: Instance, tour: Sequence[int]) -> Time:
    """t_{0,c1} + sum t_{ci,ci+1} + t_{ck,0}; 0 for an empty tour"""
    for j in tour:
        if j not in instance.eligibility:
            raise UnknownCustomerError(f"unknown customer id {j}")
    if not tour:
        return 0
    legs = zip((DEPOT,) + tuple(tour), tuple(tour) + (DEPOT,))
    return sum(instance.truck_time[i][j] for i, j in legs)


def _precedence_graph(sol: Solution) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(sol.missions)
    for seq in sol.drone_sequences:
        graph.add_edges_from(zip(seq, seq[1:]))
    return graph


def check(instance: Instance, sol: Solution) -> List[Violation]:
    """
    Check a solution against every feasibility rule

    Args:
        instance: problem instance
        sol: candidate solution (any structurally well-formed content)

    Returns:
        One Violation per distinct breach; empty iff feasible
    """
    violations: List[Violation] = []
    customers = set(instance.customers)

    if len(sol.tours) > instance.s:
        violations.append(Violation(ViolationKind.FLEET_EXCEEDED, "tours",
                                    f"{len(sol.tours)} tours for {instance.s} trucks"))
    if len(sol.drone_sequences) > instance.m:
        violations.append(Violation(ViolationKind.FLEET_EXCEEDED, "drones",
                                    f"{len(sol.drone_sequences)} drone sequences for {instance.m} drones"))

    visits = Counter(sol.truck_customers)
    for j, count in sorted(visits.items()):
        if j not in customers:
            violations.append(Violation(ViolationKind.COVERAGE, f"customer {j}", "unknown customer in a tour"))
        elif count > 1:
            violations.append(Violation(ViolationKind.DUPLICATE, f"customer {j}", f"visited {count} times by trucks"))

    for j, k in sorted(sol.missions.items()):
        if j not in customers:
            violations.append(Violation(ViolationKind.COVERAGE, f"customer {j}", "unknown customer in missions"))
            continue
        if j in visits:
            violations.append(Violation(ViolationKind.COVERAGE, f"customer {j}", "served by a truck and by drones"))
        if instance.eligibility[j].truck_only:
            violations.append(Violation(ViolationKind.TRUCK_ONLY, f"customer {j}", "truck-only customer assigned to drones"))
        elif k not in instance.group_sizes(j):
            elig = instance.eligibility[j]
            violations.append(Violation(ViolationKind.K_RANGE, f"customer {j}",
                                        f"group size {k} outside [{elig.q}, {elig.p}]"))

    for j in instance.customers:
        if j not in visits and j not in sol.missions:
            violations.append(Violation(ViolationKind.COVERAGE, f"customer {j}", "not served"))

    carriers: Counter = Counter()
    for d, seq in enumerate(sol.drone_sequences, start=1):
        flown = Counter(seq)
        for j, count in sorted(flown.items()):
            if count > 1:
                violations.append(Violation(ViolationKind.DUPLICATE, f"drone {d}", f"mission {j} repeated {count} times"))
            if j not in sol.missions:
                violations.append(Violation(ViolationKind.FLOW_MISMATCH, f"drone {d}", f"mission {j} is not planned"))
            carriers[j] += 1
    for j, k in sorted(sol.missions.items()):
        if carriers[j] != k:
            violations.append(Violation(ViolationKind.FLOW_MISMATCH, f"mission {j}",
                                        f"flown by {carriers[j]} drones, group size is {k}"))

    graph = _precedence_graph(sol)
    if not nx.is_directed_acyclic_graph(graph):
        cycle = [edge[0] for edge in nx.find_cycle(graph)]
        violations.append(Violation(ViolationKind.FLOW_MISMATCH, "drones",
                                    f"cyclic mission precedence {cycle} cannot be synchronized"))
    return violations


def evaluate(instance: Instance, sol: Solution, depot_ready: Time = 0) -> Timeline:
    """
    Compute mission times, truck returns and the makespan of a feasible solution

    A collective mission starts once all of its drones are back at the depot;
    early drones wait there at no cost.

    Args:
        instance: problem instance
        sol: checker-clean solution
        depot_ready: availability time of every vehicle at the depot (T_0)

    Returns:
        Timeline
    """
    violations = check(instance, sol)
    if violations:
        raise InfeasibleSolutionError(violations)

    graph = _precedence_graph(sol)
    start: Dict[int, Time] = {}
    completion: Dict[int, Time] = {}
    for j in nx.lexicographical_topological_sort(graph):
        start[j] = max([depot_ready] + [completion[i] for i in graph.predecessors(j)])
        completion[j] = start[j] + instance.drone_time[(j, sol.missions[j])]

    truck_return = tuple(depot_ready + tour_duration(instance, tour) for tour in sol.tours)
    drone_available = tuple(completion[seq[-1]] if seq else depot_ready for seq in sol.drone_sequences)
    alpha = max((depot_ready,) + truck_return + tuple(completion.values()))
    return Timeline(mission_start=start, mission_completion=completion, truck_return=truck_return,
                    drone_available=drone_available, makespan=alpha)


def makespan(instance: Instance, sol: Solution, depot_ready: Time = 0) -> Time:
    return evaluate(instance, sol, depot_ready).makespan


def flow_arcs(sol: Solution) -> Dict[Tuple[int, int], int]:
    """Drone flow f_ij induced by the sequences (depot = 0), one unit per drone and arc"""
    flows: Counter = Counter()
    for seq in sol.drone_sequences:
        if not seq:
            continue
        path = (DEPOT,) + tuple(seq) + (DEPOT,)
        flows.update(zip(path, path[1:]))
    return dict(flows)


def solution_to_dict(sol: Solution) -> Dict[str, Any]:
    return {
        'tours': [list(t) for t in sol.tours],
        'missions': {str(j): k for j, k in sorted(sol.missions.items())},
        'drones': [list(seq) for seq in sol.drone_sequences],
    }


def solution_from_dict(data: Mapping[str, Any]) -> Solution:
    if not isinstance(data, Mapping):
        raise SolutionFormatError("solution document must be a JSON object")
    try:
        tours = [[int(j) for j in tour] for tour in data.get('tours', [])]
        missions = {int(j): int(k) for j, k in dict(data.get('missions', {})).items()}
        drones = [[int(j) for j in seq] for seq in data.get('drones', [])]
    except (TypeError, ValueError) as e:
        raise SolutionFormatError(f"malformed solution: {str(e)}")
    return Solution(tours=tours, missions=missions, drone_sequences=drones)


def serialize_solution(sol: Solution) -> str:
    return json.dumps(solution_to_dict(sol), sort_keys=True, indent=2) + "\n"


def parse_solution(text: str) -> Solution:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Solution syntax error at line {e.lineno}, column {e.colno}: {e.msg}")
        raise SolutionFormatError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}")
    return solution_from_dict(data)


def load_solution(path) -> Solution:
    with open(path, "r") as f:
        return parse_solution(f.read())


def solution_from_tours(tours: Sequence[Sequence[int]], drone_part: Optional[Any] = None) -> Solution:
    """
    Assemble a Solution from truck tours and an optional drone plan

    Args:
        tours: customer sequences, one per used truck
        drone_part: object with `missions` (customer -> k) and `sequences` (per drone)
            attributes, such as scheduler.DronePlan

    Returns:
        Solution
    """
    if drone_part is None:
        return Solution(tours=tuple(tuple(t) for t in tours))
    return Solution(tours=tuple(tuple(t) for t in tours), missions=dict(drone_part.missions),
                    drone_sequences=drone_part.sequences)
