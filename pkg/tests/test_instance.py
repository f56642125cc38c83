import json
import math
from fractions import Fraction

import numpy as np
import pytest

from instance import (GeneratorConfig, GeneratorConfigError, InstanceError, convert_legacy_text,
                      generate_instance, instance_from_dict, load_instance, manhattan_truck_time,
                      parse_instance, serialize_instance, synthetic_mission_times, with_fleet)
from tests.builders import build_instance, generated, instance_dict, toy_instance, toy_text


class TestManhattanTruckTime:

    def test_published_speed(self):
        """7 km at 30 km/h is 14 minutes"""
        assert manhattan_truck_time((0, 0), (3, 4), 30) == 14

    def test_zero_distance(self):
        """Identical points are 0 minutes apart"""
        assert manhattan_truck_time((2.5, 1), (2.5, 1), 30) == 0

    def test_one_kilometre(self):
        """1 km at 30 km/h is 2 minutes"""
        assert manhattan_truck_time((0, 0), (1, 0), 30) == 2

    def test_exact_fraction_and_rounding(self):
        """Times stay exact unless integer minutes are requested"""
        assert manhattan_truck_time((0, 0), (1, 0), 45) == Fraction(4, 3)
        assert manhattan_truck_time((0, 0), (1, 0), 45, integer_times=True) == 1
        assert manhattan_truck_time((0, 0), (0.25, 0), 30, integer_times=True) == 1

    def test_rejects_non_positive_speed(self):
        """Speed must be positive"""
        with pytest.raises(ValueError):
            manhattan_truck_time((0, 0), (1, 1), 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_symmetry_and_triangle_inequality(self, seed):
        """Manhattan times are symmetric and metric for random points"""
        rng = np.random.default_rng(seed)
        for _ in range(50):
            a, b, c = (tuple(float(v) for v in rng.uniform(-20, 20, size=2)) for _ in range(3))
            ab = manhattan_truck_time(a, b)
            assert ab == manhattan_truck_time(b, a)
            assert manhattan_truck_time(a, c) <= ab + manhattan_truck_time(b, c)


class TestParseInstance:

    @pytest.fixture
    def minimal_document(self):
        """One drone-eligible customer, one drone, one truck"""
        return instance_dict([[0, 0], [2, 0]], {1: {1: 3}}, m=1, s=1, name="minimal")

    def test_minimal_file(self, minimal_document):
        """Smallest valid input parses into a one-customer instance"""
        inst = parse_instance(json.dumps(minimal_document))
        assert inst.n == 1
        assert inst.name == "minimal"
        assert inst.drone_time[(1, 1)] == 3
        assert inst.t(0, 1) == 2

    def test_k_range_gap(self, minimal_document):
        """A tau table that skips a group size inside [q, p] is rejected"""
        minimal_document['m'] = 2
        minimal_document['customers'][0]['drone_time'] = {"2": 5}
        minimal_document['customers'][0]['q'] = 1
        minimal_document['customers'][0]['p'] = 2
        with pytest.raises(InstanceError, match="k-range gap") as excinfo:
            parse_instance(json.dumps(minimal_document))
        assert excinfo.value.invariant == "k_range_gap"

    def test_syntax_error_position(self):
        """JSON syntax errors carry line and column"""
        with pytest.raises(InstanceError) as excinfo:
            parse_instance('{\n  "name": "x",\n  "n": }')
        assert excinfo.value.invariant == "syntax"
        assert excinfo.value.position[0] == 3

    def test_truck_only_with_drone_times(self, minimal_document):
        """Truck-only customers cannot carry mission times"""
        minimal_document['customers'][0]['truck_only'] = True
        with pytest.raises(InstanceError) as excinfo:
            parse_instance(json.dumps(minimal_document))
        assert excinfo.value.invariant == "truck_only_has_drone_time"

    def test_non_positive_tau(self, minimal_document):
        """Mission times must be positive integers"""
        minimal_document['customers'][0]['drone_time'] = {"1": 0}
        with pytest.raises(InstanceError) as excinfo:
            parse_instance(json.dumps(minimal_document))
        assert excinfo.value.invariant == "positive_tau"

    def test_group_size_above_fleet(self, minimal_document):
        """p may not exceed the drone fleet"""
        minimal_document['customers'][0]['drone_time'] = {"1": 3, "2": 2}
        with pytest.raises(InstanceError) as excinfo:
            parse_instance(json.dumps(minimal_document))
        assert excinfo.value.invariant == "group_range"

    def test_triangle_inequality_violation(self):
        """Explicit matrices must satisfy the triangle inequality"""
        data = instance_dict([[0, 0], [1, 0], [2, 0]], {}, m=1, s=1,
                             truck_time=[[0, 1, 1], [1, 0, 5], [1, 5, 0]])
        with pytest.raises(InstanceError) as excinfo:
            instance_from_dict(data)
        assert excinfo.value.invariant == "triangle_inequality"

    def test_explicit_fractional_matrix(self):
        """Explicit matrices accept exact fractions and expose an integer scaling"""
        data = instance_dict([[0, 0], [1, 0], [2, 0]], {}, m=1, s=1,
                             truck_time=[[0, "1/2", "1/3"], ["1/2", 0, "1/2"], ["1/3", "1/2", 0]])
        data['units']['integer_times'] = False
        inst = instance_from_dict(data)
        assert inst.t(0, 2) == Fraction(1, 3)
        matrix, denominator = inst.scaled_truck_matrix()
        assert denominator == 6
        assert matrix[0, 1] == 3

    def test_fractional_matrix_with_integer_units(self):
        """Declaring integer times forbids fractional entries"""
        data = instance_dict([[0, 0], [1, 0]], {}, m=1, s=1, truck_time=[[0, "1/2"], ["1/2", 0]])
        with pytest.raises(InstanceError):
            instance_from_dict(data)

    def test_non_integer_group_bounds(self, minimal_document):
        """q and p must be integers"""
        minimal_document['customers'][0]['q'] = "1"
        with pytest.raises(InstanceError) as excinfo:
            parse_instance(json.dumps(minimal_document))
        assert excinfo.value.invariant == "schema"
        minimal_document['customers'][0]['q'] = 1
        minimal_document['customers'][0]['p'] = 1.0
        with pytest.raises(InstanceError):
            parse_instance(json.dumps(minimal_document))

    def test_long_float_coordinates(self):
        """Coordinates with many decimals cannot be scaled exactly and are refused cleanly"""
        data = instance_dict([[0, 0], [95.12345678901233, 0.0], [0.013333333333333334, 90.1]],
                             {1: {1: 3}}, m=1, s=1)
        data['units']['integer_times'] = False
        with pytest.raises(InstanceError) as excinfo:
            parse_instance(json.dumps(data))
        assert excinfo.value.invariant == "time_resolution"

    def test_long_float_coordinates_with_integer_times(self):
        """Rounding to whole minutes makes the same points usable"""
        data = instance_dict([[0, 0], [95.12345678901233, 0.0], [0.013333333333333334, 90.1]],
                             {1: {1: 3}}, m=1, s=1)
        inst = parse_instance(json.dumps(data))
        assert inst.t(0, 1) == 95
        assert inst.scaled_truck_matrix()[1] == 1

    def test_short_float_coordinates(self):
        """Coordinates with a few decimals keep exact fractional times"""
        data = instance_dict([[0, 0], [1.25, 0.5], [0.1, 2.0]], {1: {1: 3}}, m=1, s=1)
        data['units']['integer_times'] = False
        inst = parse_instance(json.dumps(data))
        assert inst.t(0, 1) == Fraction(7, 4)
        assert inst.t(1, 2) == Fraction(53, 20)
        assert inst.scaled_truck_matrix()[1] == 20

    def test_eligibility_views(self):
        """Truck-only customers expose an infinite mission time and no group sizes"""
        inst = toy_instance()
        assert inst.truck_only_customers == (1,)
        assert inst.drone_customers == (2, 3, 4)
        assert inst.tau(1, 1) == math.inf
        assert list(inst.group_sizes(1)) == []
        assert list(inst.group_sizes(2)) == [1, 2]
        assert inst.max_work(4) == 14

    def test_load_from_file(self, tmp_path):
        """Instance files load from disk"""
        path = tmp_path / "toy.json"
        path.write_text(toy_text())
        inst = load_instance(path)
        assert inst.n == 4
        assert inst.t(1, 4) == 8


class TestSerialization:

    def test_round_trip_toy(self):
        """parse(serialize(I)) == I for the hand instance"""
        inst = toy_instance()
        assert parse_instance(serialize_instance(inst)) == inst

    def test_round_trip_generated(self):
        """A thousand generated instances survive serialization byte for byte"""
        shapes = [(4, 1, 1), (6, 3, 2), (8, 2, 3), (10, 4, 2)]
        for seed in range(1000):
            n, m, s = shapes[seed % len(shapes)]
            inst = generate_instance(GeneratorConfig(n=n, m=m, s=s), seed)
            text = serialize_instance(inst)
            again = parse_instance(text)
            assert again == inst, f"seed {seed}"
            assert serialize_instance(again) == text, f"seed {seed}"

    def test_sorted_keys(self):
        """Serialized documents use sorted keys and an explicit matrix"""
        data = json.loads(serialize_instance(toy_instance()))
        assert list(data) == sorted(data)
        assert len(data['truck_time']) == 5


class TestGenerateInstance:

    def test_deterministic(self):
        """Equal seeds give identical instances"""
        config = GeneratorConfig(n=5, m=3, s=2)
        assert generate_instance(config, 7) == generate_instance(config, 7)
        assert generate_instance(config, 7).name == "gen-5-3-2-7"

    def test_tau_strictly_decreasing(self):
        """More drones always fly a mission faster"""
        config = GeneratorConfig(n=8, m=3, s=2)
        for seed in range(200):
            inst = generate_instance(config, seed)
            for j in inst.drone_customers:
                sizes = list(inst.group_sizes(j))
                for k in sizes[:-1]:
                    assert inst.drone_time[(j, k + 1)] < inst.drone_time[(j, k)]

    def test_customer_at_depot_has_positive_tau(self):
        """Zero distance still costs the service overhead"""
        times = synthetic_mission_times(0.0, 1, 3, 3, GeneratorConfig(m=3))
        assert times == {1: 3, 2: 2, 3: 1}

    def test_truck_only_fraction(self):
        """A fraction of one makes every customer truck only"""
        inst = generate_instance(GeneratorConfig(n=6, m=2, s=1, truck_only_fraction=1.0), 3)
        assert inst.drone_customers == ()

    def test_range_limit(self):
        """Customers beyond the drone range are truck only"""
        for inst in generated(range(10), n=6, m=2, max_range_km=0.5, truck_only_fraction=0.0):
            for j in inst.drone_customers:
                x, y = inst.coords[j]
                assert math.hypot(x - 4, y - 4) <= 0.5

    def test_inconsistent_config(self):
        """q > p and empty fleets are rejected"""
        with pytest.raises(GeneratorConfigError):
            GeneratorConfig(min_group=3, max_group=2)
        with pytest.raises(GeneratorConfigError):
            GeneratorConfig(n=0)

    def test_from_dict_overrides(self):
        """Overrides win over the section and None overrides are ignored"""
        config = GeneratorConfig.from_dict({'n': 4, 'm': 2, 'unknown': 1}, n=6, s=None)
        assert (config.n, config.m, config.s) == (6, 2, 2)


class TestWithFleet:

    def test_truncates_group_sizes(self):
        """Group sizes above the new fleet are dropped"""
        inst = with_fleet(toy_instance(m=2), m=1)
        assert inst.m == 1
        assert list(inst.group_sizes(2)) == [1]
        assert (2, 2) not in inst.drone_time

    def test_customer_becomes_truck_only(self):
        """A customer whose minimum group exceeds the fleet loses its missions"""
        inst = build_instance([[0, 0], [1, 0], [0, 1]], {1: {2: 5, 3: 4}, 2: {1: 3}}, m=3)
        smaller = with_fleet(inst, m=1, s=2)
        assert smaller.truck_only_customers == (1,)
        assert smaller.s == 2
        assert smaller.drone_time == {(2, 1): 3}


class TestConvertLegacyText:

    LEGACY = """
    # three customers
    depot 0 0
    1 3 0 1.5 -
    2 0 4 2.0 9 5
    3 -2 0 1.0 6 inf
    """

    def test_best_effort_mapping(self):
        """Whitespace tables map onto the canonical schema"""
        inst = convert_legacy_text(self.LEGACY, "legacy", m=2, s=1)
        assert inst.n == 3
        assert inst.truck_only_customers == (1,)
        assert inst.drone_time[(2, 2)] == 5
        assert list(inst.group_sizes(3)) == [1]
        assert inst.t(0, 1) == 6

    def test_group_sizes_above_fleet_dropped(self):
        """Only k <= m survive the conversion"""
        inst = convert_legacy_text(self.LEGACY, "legacy", m=1, s=1)
        assert list(inst.group_sizes(2)) == [1]

    def test_unreadable_line(self):
        """Malformed rows report their line"""
        with pytest.raises(InstanceError) as excinfo:
            convert_legacy_text("depot 0 0\n1 x 0 1\n", "bad", m=1, s=1)
        assert excinfo.value.position == (2, 1)

    def test_missing_depot(self):
        """A table without a depot line is rejected"""
        with pytest.raises(InstanceError):
            convert_legacy_text("1 1 1 1 4\n", "bad", m=1, s=1)
