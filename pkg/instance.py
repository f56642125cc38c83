"""
Problem instances: data model, JSON parsing/serialization, validation,
synthetic generation and the best-effort benchmark converter.

Vertex 0 is the depot, customers are 1..n. Truck times are kept as exact
integers or Fractions; drone mission times tau[j, k] are positive integers
defined only for q_j <= k <= p_j.
"""
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

Time = Union[int, Fraction]

DEPOT = 0
DEFAULT_TRUCK_SPEED_KMH = 30
# Sentinel returned for infeasible (customer, group size) pairs; never do arithmetic with it
INFEASIBLE = math.inf


class InstanceError(ValueError):
    """Raised when instance text is malformed or breaks an instance invariant"""

    def __init__(self, message: str, invariant: Optional[str] = None,
                 position: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.invariant = invariant
        self.position = position


class GeneratorConfigError(ValueError):
    """Raised for inconsistent generator parameters"""


@dataclass(frozen=True)
class Eligibility:
    """Drone eligibility of one customer; q and p are 0 for truck-only customers"""
    truck_only: bool
    q: int = 0
    p: int = 0


@dataclass(frozen=True)
class Instance:
    """Immutable problem instance, validated on construction"""
    name: str
    n: int
    m: int
    s: int
    coords: Tuple[Tuple[float, float], ...]
    weights: Tuple[float, ...]
    truck_time: Tuple[Tuple[Time, ...], ...]
    drone_time: Mapping[Tuple[int, int], int]
    eligibility: Mapping[int, Eligibility]
    integer_times: bool = False
    speed_kmh: float = DEFAULT_TRUCK_SPEED_KMH
    _scaled: Tuple[Any, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        validate_instance(self)

    @property
    def customers(self) -> range:
        return range(1, self.n + 1)

    @property
    def truck_only_customers(self) -> Tuple[int, ...]:
        return tuple(j for j in self.customers if self.eligibility[j].truck_only)

    @property
    def drone_customers(self) -> Tuple[int, ...]:
        return tuple(j for j in self.customers if not self.eligibility[j].truck_only)

    def t(self, i: int, j: int) -> Time:
        return self.truck_time[i][j]

    def tau(self, j: int, k: int) -> Union[int, float]:
        """Mission time of customer j with k drones, INFEASIBLE when undefined"""
        return self.drone_time.get((j, k), INFEASIBLE)

    def group_sizes(self, j: int) -> range:
        elig = self.eligibility[j]
        if elig.truck_only:
            return range(0)
        return range(elig.q, elig.p + 1)

    def max_work(self, j: int) -> int:
        """Largest drone work k * tau over the feasible group sizes of j (0 if truck only)"""
        return max((k * self.drone_time[(j, k)] for k in self.group_sizes(j)), default=0)

    def scaled_truck_matrix(self) -> Tuple[np.ndarray, int]:
        """
        Exact integer view of the truck matrix

        Returns:
            (int64 matrix, denominator) such that t_ij == matrix[i, j] / denominator
        """
        if self._scaled is None:
            denom = 1
            for row in self.truck_time:
                for value in row:
                    denom = math.lcm(denom, Fraction(value).denominator)
            scaled = [[int(Fraction(value) * denom) for value in row] for row in self.truck_time]
            peak = max(abs(value) for row in scaled for value in row)
            _check_resolution(denom, 2 * (self.n + 1) * peak)
            object.__setattr__(self, '_scaled', (np.array(scaled, dtype=np.int64), denom))
        return self._scaled


# Scaled tour lengths plus drone work must stay far below the int64 range
SCALED_TIME_LIMIT = 2 ** 60


def _check_resolution(denominator: int, scaled_total: int) -> None:
    if scaled_total >= SCALED_TIME_LIMIT:
        raise InstanceError(
            f"truck times need a resolution of 1/{denominator} minute, too fine for exact integer "
            f"search; declare integer_times or give a rounded truck_time matrix",
            invariant="time_resolution")


def _exact(value: Union[int, float, str, Fraction]) -> Fraction:
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def _normalize(value: Fraction) -> Time:
    value = Fraction(value)
    return int(value) if value.denominator == 1 else value


def _round_half_up(value: Fraction) -> int:
    return math.floor(Fraction(value) + Fraction(1, 2))


def manhattan_truck_time(a: Sequence[float], b: Sequence[float],
                         speed_kmh: float = DEFAULT_TRUCK_SPEED_KMH,
                         integer_times: bool = False) -> Time:
    """
    Truck travel time between two points on the Manhattan metric

    Args:
        a: (x, y) in km
        b: (x, y) in km
        speed_kmh: truck speed
        integer_times: round to whole minutes, half-up

    Returns:
        Minutes, exact (int or Fraction) unless rounded
    """
    if speed_kmh <= 0:
        raise ValueError(f"speed_kmh must be positive, got {speed_kmh}")
    distance = abs(_exact(a[0]) - _exact(b[0])) + abs(_exact(a[1]) - _exact(b[1]))
    minutes = distance * 60 / _exact(speed_kmh)
    if integer_times:
        return _round_half_up(minutes)
    return _normalize(minutes)


def validate_instance(inst: Instance) -> None:
    """Check every instance invariant, raising InstanceError naming the first breach"""
    if inst.n < 1:
        raise InstanceError(f"n must be positive, got {inst.n}", invariant="customer_count")
    if inst.m < 1 or inst.s < 1:
        raise InstanceError(f"fleet sizes must be positive (m={inst.m}, s={inst.s})",
                            invariant="fleet_size")
    size = inst.n + 1
    if len(inst.coords) != size or len(inst.weights) != size:
        raise InstanceError("coords and weights need one entry per vertex", invariant="vertex_count")
    if len(inst.truck_time) != size or any(len(row) != size for row in inst.truck_time):
        raise InstanceError(f"truck_time must be {size}x{size}", invariant="matrix_shape")

    matrix, _ = inst.scaled_truck_matrix()
    if np.any(np.diag(matrix) != 0):
        raise InstanceError("t_ii must be 0", invariant="zero_diagonal")
    if np.any(matrix < 0):
        raise InstanceError("t_ij must be non-negative", invariant="non_negative")
    for j in range(size):
        via_j = matrix[:, j, None] + matrix[None, j, :]
        if np.any(via_j < matrix):
            i, k = np.argwhere(via_j < matrix)[0]
            raise InstanceError(f"triangle inequality broken: t[{i}][{k}] > t[{i}][{j}] + t[{j}][{k}]",
                                invariant="triangle_inequality")

    if set(inst.eligibility) != set(inst.customers):
        raise InstanceError("eligibility needs exactly one record per customer", invariant="eligibility")
    for (j, k), tau in inst.drone_time.items():
        if j not in inst.eligibility:
            raise InstanceError(f"drone_time for unknown customer {j}", invariant="eligibility")
        if isinstance(tau, bool) or not isinstance(tau, int) or tau < 1:
            raise InstanceError(f"tau[{j}][{k}] must be a positive integer, got {tau!r}",
                                invariant="positive_tau")
    for j in inst.customers:
        elig = inst.eligibility[j]
        keys = sorted(k for (c, k) in inst.drone_time if c == j)
        if elig.truck_only:
            if keys:
                raise InstanceError(f"truck-only customer {j} has drone times",
                                    invariant="truck_only_has_drone_time")
            continue
        if not 1 <= elig.q <= elig.p <= inst.m:
            raise InstanceError(f"customer {j}: need 1 <= q ({elig.q}) <= p ({elig.p}) <= m ({inst.m})",
                                invariant="group_range")
        if keys != list(range(elig.q, elig.p + 1)):
            raise InstanceError(f"customer {j}: k-range gap, drone times for {keys} but q={elig.q}, p={elig.p}",
                                invariant="k_range_gap")

    matrix, denom = inst.scaled_truck_matrix()
    work = sum(inst.max_work(j) for j in inst.customers)
    _check_resolution(denom, 2 * (inst.n + 1) * int(np.abs(matrix).max()) + work * denom)


def _parse_time(value: Any, where: str) -> Fraction:
    if isinstance(value, bool):
        raise InstanceError(f"{where}: expected a number", invariant="schema")
    if isinstance(value, (int, float)):
        return _exact(value)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError:
            pass
    raise InstanceError(f"{where}: expected a number, got {value!r}", invariant="schema")


def _require(data: Dict[str, Any], key: str, kinds: tuple, where: str) -> Any:
    if key not in data:
        raise InstanceError(f"{where}: missing field '{key}'", invariant="schema")
    value = data[key]
    if isinstance(value, bool) and bool not in kinds:
        raise InstanceError(f"{where}: field '{key}' has wrong type", invariant="schema")
    if not isinstance(value, kinds):
        raise InstanceError(f"{where}: field '{key}' has wrong type", invariant="schema")
    return value


def _metric_closure(matrix: List[List[Fraction]]) -> List[List[Fraction]]:
    size = len(matrix)
    closed = [row[:] for row in matrix]
    for j in range(size):
        for i in range(size):
            via = closed[i][j]
            row_i = closed[i]
            for k in range(size):
                if via + closed[j][k] < row_i[k]:
                    row_i[k] = via + closed[j][k]
    return closed


def instance_from_dict(data: Dict[str, Any]) -> Instance:
    """Build a validated Instance from the canonical JSON structure"""
    if not isinstance(data, dict):
        raise InstanceError("instance document must be a JSON object", invariant="schema")
    name = _require(data, 'name', (str,), 'instance')
    n = _require(data, 'n', (int,), 'instance')
    m = _require(data, 'm', (int,), 'instance')
    s = _require(data, 's', (int,), 'instance')
    depot = _require(data, 'depot', (list,), 'instance')
    customers = _require(data, 'customers', (list,), 'instance')
    units = data.get('units') or {}
    integer_times = bool(units.get('integer_times', False))
    speed_kmh = data.get('speed_kmh', DEFAULT_TRUCK_SPEED_KMH)

    if isinstance(speed_kmh, bool) or not isinstance(speed_kmh, (int, float)) or speed_kmh <= 0:
        raise InstanceError(f"speed_kmh must be a positive number, got {speed_kmh!r}", invariant="schema")
    if len(customers) != n:
        raise InstanceError(f"expected {n} customers, found {len(customers)}", invariant="customer_count")

    coords: List[Tuple[float, float]] = [None] * (n + 1)
    weights: List[float] = [0.0] * (n + 1)
    if len(depot) != 2:
        raise InstanceError("depot must be [x, y]", invariant="schema")
    coords[DEPOT] = (depot[0], depot[1])
    drone_time: Dict[Tuple[int, int], int] = {}
    eligibility: Dict[int, Eligibility] = {}

    for entry in customers:
        where = f"customer {entry.get('id', '?') if isinstance(entry, dict) else '?'}"
        if not isinstance(entry, dict):
            raise InstanceError(f"{where}: expected an object", invariant="schema")
        j = _require(entry, 'id', (int,), where)
        if not 1 <= j <= n or coords[j] is not None:
            raise InstanceError(f"{where}: ids must be 1..n, each once", invariant="customer_ids")
        xy = _require(entry, 'xy', (list,), where)
        if len(xy) != 2:
            raise InstanceError(f"{where}: xy must be [x, y]", invariant="schema")
        coords[j] = (xy[0], xy[1])
        weights[j] = _require(entry, 'w', (int, float), where)
        truck_only = entry.get('truck_only', False)
        table = entry.get('drone_time') or {}
        if not isinstance(table, dict):
            raise InstanceError(f"{where}: drone_time must be an object", invariant="schema")
        for key, tau in table.items():
            try:
                k = int(key)
            except ValueError:
                raise InstanceError(f"{where}: drone_time keys must be group sizes", invariant="schema")
            if isinstance(tau, float) and tau.is_integer():
                tau = int(tau)
            drone_time[(j, k)] = tau
        ks = sorted(k for (c, k) in drone_time if c == j)
        if truck_only:
            eligibility[j] = Eligibility(truck_only=True)
            continue
        if not ks:
            raise InstanceError(f"{where}: drone-eligible customer without drone times",
                                invariant="group_range")
        q = _require(entry, 'q', (int,), where) if 'q' in entry else ks[0]
        p = _require(entry, 'p', (int,), where) if 'p' in entry else ks[-1]
        eligibility[j] = Eligibility(truck_only=False, q=q, p=p)

    explicit = data.get('truck_time')
    size = n + 1
    if explicit is not None:
        if not isinstance(explicit, list) or len(explicit) != size \
                or any(not isinstance(row, list) or len(row) != size for row in explicit):
            raise InstanceError(f"truck_time must be a {size}x{size} matrix", invariant="matrix_shape")
        matrix = [[_parse_time(v, f"truck_time[{i}][{k}]") for k, v in enumerate(row)]
                  for i, row in enumerate(explicit)]
        if integer_times and any(v.denominator != 1 for row in matrix for v in row):
            raise InstanceError("integer_times declared but truck_time has fractional entries",
                                invariant="integer_times")
    else:
        matrix = [[_exact(manhattan_truck_time(coords[i], coords[k], speed_kmh, integer_times))
                   for k in range(size)] for i in range(size)]
        if integer_times:
            closed = _metric_closure(matrix)
            if closed != matrix:
                logger.warning(f"Instance {name}: rounded truck times repaired by metric closure")
                matrix = closed

    return Instance(
        name=name, n=n, m=m, s=s,
        coords=tuple(coords),
        weights=tuple(weights),
        truck_time=tuple(tuple(_normalize(v) for v in row) for row in matrix),
        drone_time=drone_time,
        eligibility=eligibility,
        integer_times=integer_times,
        speed_kmh=speed_kmh,
    )


def parse_instance(text: str) -> Instance:
    """
    Parse instance-file content in the canonical JSON schema

    Args:
        text: JSON document

    Returns:
        Validated Instance
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Instance syntax error at line {e.lineno}, column {e.colno}: {e.msg}")
        raise InstanceError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}",
                            invariant="syntax", position=(e.lineno, e.colno))
    inst = instance_from_dict(data)
    logger.info(f"Parsed instance {inst.name}: n={inst.n}, m={inst.m}, s={inst.s}, "
                f"|C_T|={len(inst.truck_only_customers)}")
    return inst


def time_to_json(value: Time) -> Union[int, str]:
    value = Fraction(value)
    return int(value) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


def instance_to_dict(inst: Instance) -> Dict[str, Any]:
    customers = []
    for j in inst.customers:
        elig = inst.eligibility[j]
        entry = {
            'id': j,
            'xy': list(inst.coords[j]),
            'w': inst.weights[j],
            'truck_only': elig.truck_only,
            'drone_time': {str(k): inst.drone_time[(j, k)] for k in inst.group_sizes(j)},
        }
        if not elig.truck_only:
            entry['q'] = elig.q
            entry['p'] = elig.p
        customers.append(entry)
    return {
        'name': inst.name,
        'n': inst.n,
        'm': inst.m,
        's': inst.s,
        'depot': list(inst.coords[DEPOT]),
        'customers': customers,
        'truck_time': [[time_to_json(v) for v in row] for row in inst.truck_time],
        'speed_kmh': inst.speed_kmh,
        'units': {'time': 'min', 'dist': 'km', 'integer_times': inst.integer_times},
    }


def serialize_instance(inst: Instance) -> str:
    """Canonical, byte-stable JSON text (sorted keys, explicit truck matrix)"""
    return json.dumps(instance_to_dict(inst), sort_keys=True, indent=2) + "\n"


def with_fleet(inst: Instance, m: Optional[int] = None, s: Optional[int] = None) -> Instance:
    """
    Re-target an instance to another fleet size

    Drone tables are cut to k <= m; customers whose minimum group exceeds m
    become truck only.
    """
    new_m = inst.m if m is None else m
    new_s = inst.s if s is None else s
    drone_time = {(j, k): tau for (j, k), tau in inst.drone_time.items() if k <= new_m}
    eligibility = {}
    for j, elig in inst.eligibility.items():
        if elig.truck_only or elig.q > new_m:
            eligibility[j] = Eligibility(truck_only=True)
            drone_time = {key: tau for key, tau in drone_time.items() if key[0] != j}
        else:
            eligibility[j] = Eligibility(truck_only=False, q=elig.q, p=min(elig.p, new_m))
    return replace(inst, m=new_m, s=new_s, drone_time=drone_time, eligibility=eligibility)


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic instance generator"""
    n: int = 8
    m: int = 3
    s: int = 2
    grid_km: int = 10
    truck_only_fraction: float = 0.2
    max_range_km: Optional[float] = 12.0
    drone_speed_kmh: float = 40.0
    group_speedup: float = 0.25
    service_minutes: int = 1
    min_group: int = 1
    max_group: int = 3
    max_weight_kg: float = 10.0
    truck_speed_kmh: float = DEFAULT_TRUCK_SPEED_KMH
    integer_times: bool = True
    name: Optional[str] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.s < 1:
            raise GeneratorConfigError(f"n, m, s must be positive (n={self.n}, m={self.m}, s={self.s})")
        if self.grid_km < 1:
            raise GeneratorConfigError("grid_km must be at least 1")
        if not 0.0 <= self.truck_only_fraction <= 1.0:
            raise GeneratorConfigError("truck_only_fraction must lie in [0, 1]")
        if self.drone_speed_kmh <= 0 or self.truck_speed_kmh <= 0 or self.group_speedup < 0:
            raise GeneratorConfigError("speeds must be positive and group_speedup non-negative")
        if self.service_minutes < 1:
            raise GeneratorConfigError("service_minutes must be at least 1")
        if self.min_group < 1 or self.min_group > self.max_group:
            raise GeneratorConfigError(f"group range inconsistent: q={self.min_group} > p={self.max_group}")
        if self.min_group > self.m:
            raise GeneratorConfigError(f"min_group {self.min_group} exceeds drone fleet m={self.m}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], **overrides) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in dict(data).items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def group_speed(self, k: int) -> float:
        """Synthetic cruise speed of a k-drone group, strictly increasing in k when group_speedup > 0"""
        return self.drone_speed_kmh * (1.0 + self.group_speedup * (k - 1))


def synthetic_mission_times(distance_km: float, q: int, p: int, m: int,
                            config: GeneratorConfig) -> Dict[int, int]:
    """
    tau^k = ceil(120 * d / v(k)) + service + (m - k) for q <= k <= p

    The flight term never grows with k and the overhead term strictly
    shrinks, so the table is strictly decreasing and at least 1 at d = 0.
    """
    times = {}
    for k in range(q, p + 1):
        flight = math.ceil(round(120.0 * distance_km / config.group_speed(k), 9))
        times[k] = flight + config.service_minutes + (m - k)
    return times


def generate_instance(config: GeneratorConfig, seed: int) -> Instance:
    """
    Generate a reproducible random instance

    Args:
        config: generator parameters
        seed: 64-bit seed; equal seeds give identical instances

    Returns:
        Validated Instance
    """
    rng = np.random.default_rng(seed)
    n, m = config.n, config.m
    half = config.grid_km // 2
    points = rng.integers(0, config.grid_km + 1, size=(n, 2))
    coords = [(half, half)] + [(int(x), int(y)) for x, y in points]
    weights = [0.0] + [round(float(w), 2) for w in rng.uniform(0.1, config.max_weight_kg, size=n)]
    coin = rng.random(size=n)
    group_draws = rng.random(size=(n, 2))

    customers = []
    max_group = min(config.max_group, m)
    for j in range(1, n + 1):
        x, y = coords[j]
        distance = math.hypot(x - half, y - half)
        out_of_range = config.max_range_km is not None and distance > config.max_range_km
        entry = {'id': j, 'xy': [x, y], 'w': weights[j], 'truck_only': False}
        if coin[j - 1] < config.truck_only_fraction or out_of_range:
            entry['truck_only'] = True
            entry['drone_time'] = {}
        else:
            q = config.min_group + int(group_draws[j - 1, 0] * (max_group - config.min_group + 1))
            p = q + int(group_draws[j - 1, 1] * (m - q + 1))
            times = synthetic_mission_times(distance, q, p, m, config)
            entry['drone_time'] = {str(k): tau for k, tau in times.items()}
            entry['q'], entry['p'] = q, p
        customers.append(entry)

    data = {
        'name': config.name or f"gen-{n}-{m}-{config.s}-{seed}",
        'n': n, 'm': m, 's': config.s,
        'depot': [half, half],
        'customers': customers,
        'speed_kmh': config.truck_speed_kmh,
        'units': {'time': 'min', 'dist': 'km', 'integer_times': config.integer_times},
    }
    inst = instance_from_dict(data)
    logger.debug(f"Generated instance {inst.name}")
    return inst


_INFEASIBLE_TOKENS = {'-', 'inf', 'infinity', 'x', 'na'}


def convert_legacy_text(text: str, name: str, m: int, s: int,
                        integer_times: bool = True,
                        speed_kmh: float = DEFAULT_TRUCK_SPEED_KMH) -> Instance:
    """
    Best-effort converter for whitespace benchmark tables

    Expected layout (blank lines and '#' comments ignored):
        depot <x> <y>
        <id> <x> <y> <w> <tau_1> ... <tau_K>
    where '-' or 'inf' marks an infeasible group size. Customers with no
    feasible group size become truck only; only group sizes k <= m are kept.
    """
    depot: Optional[List[float]] = None
    customers = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            if tokens[0].lower() == 'depot' or (depot is None and tokens[0] == '0'):
                depot = [float(tokens[1]), float(tokens[2])]
                continue
            j = int(tokens[0])
            x, y, w = float(tokens[1]), float(tokens[2]), float(tokens[3])
        except (IndexError, ValueError):
            raise InstanceError(f"line {line_no}: cannot read '{raw.strip()}'",
                                invariant="syntax", position=(line_no, 1))
        table = {}
        for k, token in enumerate(tokens[4:], start=1):
            if token.lower() in _INFEASIBLE_TOKENS or k > m:
                continue
            table[str(k)] = math.ceil(float(token))
        customers.append({'id': j, 'xy': [x, y], 'w': w,
                          'truck_only': not table, 'drone_time': table})
    if depot is None:
        raise InstanceError("no depot line found", invariant="syntax")

    data = {
        'name': name, 'n': len(customers), 'm': m, 's': s,
        'depot': depot, 'customers': customers, 'speed_kmh': speed_kmh,
        'units': {'time': 'min', 'dist': 'km', 'integer_times': integer_times},
    }
    inst = instance_from_dict(data)
    logger.info(f"Converted legacy table into instance {name} (n={inst.n})")
    return inst


def load_instance(path) -> Instance:
    """Read and parse an instance file"""
    with open(path, "r") as f:
        return parse_instance(f.read())
