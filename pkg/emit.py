"""
LP-format export of the three-index MILP and import of solver assignments.

Variables: alpha (makespan), w_<truck>_<i>_<j> (truck arc), u_<truck>_<j>
(truck visits vertex), z_<k>_<j> (customer j flown by k drones), y_<i>_<j>
(drone precedence), f_<i>_<j> (drones flowing from mission i to j, depot = 0)
and T_<j> (mission completion). Every row is written on a single line.
"""
import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, fields
from fractions import Fraction
from itertools import combinations
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from exact import ArcSet, MalformedSolutionError, separate_subtours
from instance import DEPOT, Instance, Time
from scheduler import InfeasibleMissionError, MissionSet, schedule_greedy
from solution import Solution, ViolationKind, check, makespan

logger = logging.getLogger(__name__)

SEC_MODES = ("none", "pairs_and_triples", "all_up_to")
MAX_SEC_SIZE = 5
MAX_NAME_LENGTH = 255
BINARY_TOLERANCE = 1e-6


class EmitterConfigError(ValueError):
    """Raised when emitter settings are inconsistent"""


class MilpImportError(ValueError):
    """Raised when a variable assignment cannot be turned into a feasible solution"""

    def __init__(self, message: str, violations: Optional[Sequence[Any]] = None):
        super().__init__(message)
        self.violations = list(violations or [])


class SubtourError(MilpImportError):
    """A truck arc set contains a circuit that misses the depot"""

    def __init__(self, subset: FrozenSet[int], truck: int):
        self.subset = frozenset(subset)
        self.truck = truck
        super().__init__(f"truck {truck}: subtour on customers {sorted(self.subset)}")


class FractionalValueError(MilpImportError):
    """A binary variable holds a value that is not 0 or 1"""

    def __init__(self, name: str, value: float):
        self.name = name
        self.value = value
        super().__init__(f"binary variable {name} has fractional value {value}")


@dataclass(frozen=True)
class EmitterConfig:
    include_va: bool = True
    sec_mode: str = "pairs_and_triples"
    # Largest subset size for sec_mode all_up_to
    sec_max: int = 3
    big_M: Optional[Time] = None
    s: Optional[int] = None
    integer_flows: bool = True
    depot_ready: Time = 0

    def __post_init__(self):
        if self.sec_mode not in SEC_MODES:
            raise EmitterConfigError(f"sec_mode must be one of {SEC_MODES}, got {self.sec_mode!r}")
        if self.sec_mode == "all_up_to" and not 2 <= self.sec_max <= MAX_SEC_SIZE:
            raise EmitterConfigError(f"all_up_to needs 2 <= sec_max <= {MAX_SEC_SIZE}, got {self.sec_max}")
        if self.s is not None and self.s < 1:
            raise EmitterConfigError(f"truck count must be positive, got {self.s}")
        if self.depot_ready < 0:
            raise EmitterConfigError("depot_ready must be non-negative")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], **overrides) -> "EmitterConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in dict(data).items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def sec_sizes(self, n: int) -> range:
        if self.sec_mode == "none":
            return range(0)
        top = 3 if self.sec_mode == "pairs_and_triples" else self.sec_max
        return range(2, min(top, n) + 1)


def safe_horizon(instance: Instance, depot_ready: Time = 0) -> Time:
    """Depot availability plus every drone-eligible customer flown serially at its slowest group size"""
    return depot_ready + sum(max(instance.drone_time[(j, k)] for k in instance.group_sizes(j))
                             for j in instance.drone_customers)


def _num(value: Time) -> str:
    if isinstance(value, int) or Fraction(value).denominator == 1:
        return str(int(value))
    return format(float(value), '.17g')


def _terms(terms: Iterable[Tuple[Time, str]]) -> str:
    parts = []
    for coef, name in terms:
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign}{_num(abs(coef))} {name}")
    return " ".join(parts)


def _row(name: str, terms: Iterable[Tuple[Time, str]], sense: str, rhs: Time) -> Optional[str]:
    body = _terms(terms)
    if not body:
        return None
    return f" {name}: {body} {sense} {_num(rhs)}"


def _sec_name(subset: Sequence[int], truck: int) -> str:
    name = f"sec_{'-'.join(str(j) for j in subset)}_{truck}"
    if len(name) > MAX_NAME_LENGTH:
        digest = hashlib.sha1('-'.join(str(j) for j in subset).encode()).hexdigest()
        name = f"sec_h{digest}_{truck}"
    return name


def emit_milp(instance: Instance, cfg: Optional[EmitterConfig] = None) -> str:
    """
    Write the MILP as CPLEX LP text

    Args:
        instance: problem instance
        cfg: emitter settings

    Returns:
        LP text, byte-identical for identical inputs
    """
    cfg = cfg or EmitterConfig()
    s = cfg.s or instance.s
    m = instance.m
    horizon = safe_horizon(instance, cfg.depot_ready)
    big_m = horizon if cfg.big_M is None else cfg.big_M
    if big_m < horizon:
        raise EmitterConfigError(f"big_M {big_m} is below the safe horizon {horizon}")

    customers = list(instance.customers)
    vertices = [DEPOT] + customers
    flexible = list(instance.drone_customers)
    fleet_nodes = [DEPOT] + flexible
    trucks = range(1, s + 1)
    t = instance.truck_time

    def w(k, i, j):
        return f"w_{k}_{i}_{j}"

    def u(k, j):
        return f"u_{k}_{j}"

    def z(k, j):
        return f"z_{k}_{j}"

    rows: List[Optional[str]] = []
    for k in trucks:
        rows.append(_row(f"tour_{k}", [(1, "alpha")] + [(-t[i][j], w(k, i, j)) for i in vertices
                                                      for j in vertices if i != j], ">=", 0))
    for j in flexible:
        rows.append(_row(f"cmpl_{j}", [(1, "alpha"), (-1, f"T_{j}")], ">=", 0))
    for j in customers:
        visits = [(1, u(k, j)) for k in trucks]
        if instance.eligibility[j].truck_only:
            rows.append(_row(f"truck_{j}", visits, "=", 1))
        else:
            rows.append(_row(f"assign_{j}", visits + [(1, z(g, j)) for g in instance.group_sizes(j)], "=", 1))
    for j in customers:
        for k in trucks:
            rows.append(_row(f"use_{j}_{k}", [(1, u(k, j)), (-1, u(k, DEPOT))], "<=", 0))
    for j in vertices:
        for k in trucks:
            into = [(1, w(k, i, j)) for i in vertices if i != j]
            out = [(1, w(k, j, l)) for l in vertices if l != j]
            rows.append(_row(f"deg_{j}_{k}", into + out + [(-2, u(k, j))], "=", 0))
            rows.append(_row(f"indeg_{j}_{k}", into + [(-1, u(k, j))], "=", 0))

    sec_sizes = cfg.sec_sizes(len(customers))
    for size in sec_sizes:
        for subset in combinations(customers, size):
            for k in trucks:
                arcs = [(1, w(k, i, j)) for i in subset for j in subset if i != j]
                rows.append(_row(_sec_name(subset, k), arcs, "<=", size - 1))

    if flexible:
        rows.append(_row("dout", [(1, f"f_{DEPOT}_{j}") for j in flexible], "<=", m))
        for j in flexible:
            inflow = [(1, f"f_{i}_{j}") for i in fleet_nodes if i != j]
            rows.append(_row(f"fin_{j}", inflow + [(-g, z(g, j)) for g in instance.group_sizes(j)], "=", 0))
        for j in fleet_nodes:
            inflow = [(1, f"f_{i}_{j}") for i in fleet_nodes if i != j]
            outflow = [(-1, f"f_{j}_{l}") for l in fleet_nodes if l != j]
            rows.append(_row(f"cons_{j}", inflow + outflow, "=", 0))
        for i in fleet_nodes:
            for j in fleet_nodes:
                if i == j:
                    continue
                rows.append(_row(f"flowlo_{i}_{j}", [(1, f"f_{i}_{j}"), (-m, f"y_{i}_{j}")], "<=", 0))
                rows.append(_row(f"flowhi_{i}_{j}", [(1, f"y_{i}_{j}"), (-1, f"f_{i}_{j}")], "<=", 0))
        for i in fleet_nodes:
            for j in flexible:
                if i == j:
                    continue
                terms = [(1, f"T_{j}"), (-1, f"T_{i}")]
                terms += [(-instance.drone_time[(j, g)], z(g, j)) for g in instance.group_sizes(j)]
                terms.append((-big_m, f"y_{i}_{j}"))
                rows.append(_row(f"sync_{i}_{j}", terms, ">=", -big_m))

    if cfg.include_va:
        work = [(-g * instance.drone_time[(j, g)], z(g, j)) for j in flexible for g in instance.group_sizes(j)]
        rows.append(_row("va", [(m, "alpha")] + work, ">=", 0))

    complete = len(customers) < 2 or (len(sec_sizes) > 0 and sec_sizes[-1] >= len(customers))
    if complete:
        sec_note = "all subtour elimination constraints present"
    else:
        sec_note = "lazy subtour separation required for correctness"
    sizes = f"|H| in [{sec_sizes[0]}, {sec_sizes[-1]}]" if sec_sizes else "none emitted"

    lines = [
        f"\\* Collective-drone routing MILP, instance {instance.name} "
        f"(n={instance.n}, m={m}, s={s}) *\\",
        f"\\* Subtour elimination {cfg.sec_mode}: {sizes}; {sec_note} *\\",
        f"\\* Big-M {_num(big_m)} *\\",
        "",
        "min",
        " obj: +1 alpha",
        "",
        "s.t.",
    ]
    lines += [row for row in rows if row is not None]
    lines += ["", "bounds", f" T_{DEPOT} = {_num(cfg.depot_ready)}"]
    flows = [f"f_{i}_{j}" for i in fleet_nodes for j in fleet_nodes if i != j] if flexible else []
    lines += [f" 0 <= {name} <= {m}" for name in flows]

    binaries = [w(k, i, j) for k in trucks for i in vertices for j in vertices if i != j]
    binaries += [u(k, j) for k in trucks for j in vertices]
    binaries += [z(g, j) for j in flexible for g in instance.group_sizes(j)]
    binaries += [f"y_{i}_{j}" for i in fleet_nodes for j in fleet_nodes if i != j] if flexible else []
    lines += ["", "binary"] + [f" {name}" for name in binaries]
    if cfg.integer_flows and flows:
        lines += ["", "general"] + [f" {name}" for name in flows]
    lines += ["", "end", ""]
    text = "\n".join(lines)
    logger.info(f"Emitted MILP for {instance.name}: {sum(r is not None for r in rows)} rows, "
                f"{len(binaries)} binaries")
    return text


_VARIABLE = re.compile(r"^(alpha|T_\d+|[wuzyf](_\d+)+)$")


def _parse_assignment(text: str) -> Dict[str, float]:
    values: Dict[str, float] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", "\\")):
            continue
        tokens = line.replace("=", " ").split()
        if len(tokens) != 2:
            logger.error(f"Assignment line {line_no} is not 'name value': {line}")
            raise MilpImportError(f"line {line_no}: expected 'name value', got {line!r}")
        name, raw_value = tokens
        try:
            value = float(raw_value)
        except ValueError:
            logger.error(f"Assignment line {line_no} has a non-numeric value: {line}")
            raise MilpImportError(f"line {line_no}: value {raw_value!r} is not a number")
        if not _VARIABLE.match(name):
            logger.debug(f"Ignoring unknown variable {name}")
            continue
        values[name] = value
    return values


def _binary(name: str, value: float) -> int:
    rounded = round(value)
    if abs(value - rounded) > BINARY_TOLERANCE or rounded not in (0, 1):
        raise FractionalValueError(name, value)
    return int(rounded)


def _decompose_flows(flows: Mapping[Tuple[int, int], float], m: int) -> Optional[List[List[int]]]:
    """Split integer drone flow into depot-to-depot paths, one per drone; None when impossible"""
    remaining: Counter = Counter()
    for arc, value in flows.items():
        if abs(value - round(value)) > BINARY_TOLERANCE:
            return None
        if round(value) > 0:
            remaining[arc] = int(round(value))

    sequences: List[List[int]] = []
    limit = sum(remaining.values()) + 1
    while any(i == DEPOT and count > 0 for (i, _), count in remaining.items()):
        sequence, vertex = [], DEPOT
        for _ in range(limit):
            successors = sorted(j for (i, j), count in remaining.items() if i == vertex and count > 0)
            if not successors:
                return None
            remaining[(vertex, successors[0])] -= 1
            vertex = successors[0]
            if vertex == DEPOT:
                break
            sequence.append(vertex)
        else:
            return None
        sequences.append(sequence)
    if any(count > 0 for count in remaining.values()) or len(sequences) > m:
        return None
    return sequences + [[] for _ in range(m - len(sequences))]


def import_milp_solution(text: str, instance: Instance, s: Optional[int] = None) -> Solution:
    """
    Map a solver assignment ("name value" lines) back to a Solution

    Variables missing from the listing are 0. Truck arcs are checked for
    subtours; drone flow is decomposed into per-drone mission sequences,
    falling back to greedy scheduling of the imported missions when the flow
    does not decompose.

    Args:
        text: variable assignment listing
        instance: the instance the LP was emitted for
        s: truck count used at emission (defaults to instance.s)

    Returns:
        Checker-clean Solution
    """
    values = _parse_assignment(text)
    for name, value in values.items():
        if name[0] in "wuzy":
            _binary(name, value)

    tours = []
    for k in range(1, (s or instance.s) + 1):
        prefix = f"w_{k}_"
        arcs = []
        for name, value in sorted(values.items()):
            if name.startswith(prefix) and round(value) == 1:
                _, _, i, j = name.split("_")
                arcs.append((int(i), int(j)))
        try:
            subtours = separate_subtours(ArcSet(k, tuple(arcs)))
        except MalformedSolutionError as e:
            logger.error(f"Truck {k} arcs are not circuits: {str(e)}")
            raise MilpImportError(str(e))
        if subtours:
            logger.error(f"Truck {k} has subtour {sorted(subtours[0])}")
            raise SubtourError(subtours[0], k)
        successor = dict(arcs)
        tour, vertex = [], successor.get(DEPOT)
        while vertex is not None and vertex != DEPOT:
            tour.append(vertex)
            vertex = successor.get(vertex)
        if tour:
            tours.append(tour)

    missions: Dict[int, int] = {}
    for name, value in sorted(values.items()):
        if name.startswith("z_") and round(value) == 1:
            _, g, j = name.split("_")
            if int(j) in missions:
                raise MilpImportError(f"customer {j} has several group sizes")
            missions[int(j)] = int(g)

    flows = {}
    for name, value in values.items():
        if name.startswith("f_"):
            _, i, j = name.split("_")
            flows[(int(i), int(j))] = value
    drones = _decompose_flows(flows, instance.m)

    sol = Solution(tours=tours, missions=missions, drone_sequences=drones or [])
    violations = check(instance, sol)
    drone_kinds = {ViolationKind.FLOW_MISMATCH, ViolationKind.DUPLICATE}
    if drones is None or any(v.kind in drone_kinds for v in violations):
        logger.warning("Drone flow does not decompose into mission sequences, scheduling missions greedily")
        try:
            plan = schedule_greedy(MissionSet.from_assignment(instance, missions))
        except (InfeasibleMissionError, KeyError) as e:
            raise MilpImportError(f"imported missions cannot be scheduled: {str(e)}")
        sol = Solution(tours=tours, missions=missions, drone_sequences=plan.sequences)
        violations = check(instance, sol)
    if violations:
        summary = "; ".join(f"{v.kind.value}({v.subject}): {v.detail}" for v in violations[:5])
        logger.error(f"Imported assignment is infeasible: {summary}")
        raise MilpImportError(f"imported assignment is infeasible: {summary}", violations)

    if "alpha" in values:
        value = makespan(instance, sol)
        if float(value) > values["alpha"] + BINARY_TOLERANCE:
            logger.warning(f"Imported solution evaluates to {value}, above the listed alpha {values['alpha']}")
    return sol
