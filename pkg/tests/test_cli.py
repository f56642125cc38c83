import json

import pytest

from cli import RunRecord, run
from exact import SizeCapError, SolveOutcome, SolveStatus
from instance import load_instance, parse_instance, serialize_instance
from output_handler import OutputHandler
from solution import Solution, parse_solution, serialize_solution
from tests.builders import generated, instance_dict, toy_text
from tests.test_emit import TOY_OPTIMAL_ASSIGNMENT


@pytest.fixture
def toy_file(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(toy_text())
    return str(path)


@pytest.fixture
def bench_dir(tmp_path):
    directory = tmp_path / "bench"
    directory.mkdir()
    for inst in generated(range(3), n=4, m=2, s=1):
        (directory / f"{inst.name}.json").write_text(serialize_instance(inst))
    return directory


class TestGen:

    def test_writes_instance(self, tmp_path):
        """gen writes a loadable instance named after its parameters"""
        path = tmp_path / "gen.json"
        assert run(["gen", "--n", "5", "--m", "2", "--s", "1", "--seed", "3", "--out", str(path)]) == 0
        inst = load_instance(path)
        assert inst.n == 5
        assert inst.name == "gen-5-2-1-3"

    def test_reproducible(self, capsys):
        """Equal seeds print identical documents"""
        run(["gen", "--n", "4", "--seed", "9"])
        first = capsys.readouterr().out
        run(["gen", "--n", "4", "--seed", "9"])
        assert capsys.readouterr().out == first


class TestSolve:

    def test_exact_json(self, toy_file, capsys):
        """The exact solver proves the hand instance"""
        assert run(["solve", toy_file, "--iters", "20"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result['status'] == "optimal"
        assert result['lb'] == result['ub'] == 12
        assert result['gap'] == 0.0
        assert result['solver'] == "exact"
        assert set(result['solution']) == {'tours', 'missions', 'drones'}

    def test_heuristic_csv(self, toy_file, capsys):
        """CSV output follows the bench columns"""
        assert run(["solve", toy_file, "--solver", "heuristic", "--iters", "50", "--format", "csv",
                    "--omit-timing"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "instance,s,m,solver,status,lb,ub,wall_ms,seed"
        assert lines[1].startswith("toy,1,2,heuristic,")
        assert lines[1].endswith(",,0")

    def test_best_time_column(self, toy_file, capsys):
        """--best-time appends best_ms after the bench columns"""
        assert run(["solve", toy_file, "--iters", "20", "--format", "csv", "--best-time"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "instance,s,m,solver,status,lb,ub,wall_ms,seed,best_ms"
        best_ms = lines[1].split(",")[-1]
        assert int(best_ms) <= int(lines[1].split(",")[7])

    def test_best_time_json(self, toy_file, capsys):
        """JSON results carry best_ms unless timing is omitted"""
        assert run(["solve", toy_file, "--iters", "20"]) == 0
        assert json.loads(capsys.readouterr().out)["best_ms"] >= 0
        assert run(["solve", toy_file, "--iters", "20", "--omit-timing"]) == 0
        assert json.loads(capsys.readouterr().out)["best_ms"] is None

    @pytest.mark.parametrize("solver", ["exact", "heuristic"])
    def test_depot_ready_from_config(self, toy_file, tmp_path, capsys, solver):
        """A configured depot_ready delays every vehicle for both solvers and for check"""
        config = tmp_path / "late.yaml"
        config.write_text("solution:\n  depot_ready: 5\n")
        solution_path = tmp_path / "sol.json"
        assert run(["--config", str(config), "solve", toy_file, "--solver", solver, "--iters", "200",
                    "--seed", "1", "--solution-out", str(solution_path)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert 5 + 7 <= result["lb"] <= 17 <= result["ub"]
        if solver == "exact":
            assert result["lb"] == result["ub"] == 17
        assert run(["--config", str(config), "check", toy_file, str(solution_path)]) == 0
        assert capsys.readouterr().out == f"feasible, makespan={result['ub']}\n"

    def test_solution_round_trip_through_check(self, toy_file, tmp_path, capsys):
        """A saved incumbent passes check with the same makespan"""
        solution_path = tmp_path / "sol.json"
        assert run(["solve", toy_file, "--iters", "20", "--solution-out", str(solution_path)]) == 0
        capsys.readouterr()
        assert run(["check", toy_file, str(solution_path)]) == 0
        assert capsys.readouterr().out == "feasible, makespan=12\n"

    def test_fleet_override(self, toy_file, capsys):
        """--s re-targets the instance"""
        assert run(["solve", toy_file, "--s", "2", "--iters", "20", "--omit-timing"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result['s'] == 2
        assert result['time_ms'] is None

    def test_budget_exhausted_exit_code(self, toy_file, mocker):
        """An exhausted budget exits with 3"""
        mocker.patch('cli.solve_exact', return_value=SolveOutcome(SolveStatus.BUDGET_EXHAUSTED, 10, 12))
        assert run(["solve", toy_file]) == 3

    def test_size_cap_exit_code(self, toy_file, mocker):
        """Internal size limits exit with 3"""
        mocker.patch('cli.solve_exact', side_effect=SizeCapError("too many customers"))
        assert run(["solve", toy_file]) == 3

    def test_missing_file(self, tmp_path):
        """Unreadable inputs exit with 1"""
        assert run(["solve", str(tmp_path / "missing.json")]) == 1

    def test_malformed_instance(self, tmp_path, capsys):
        """Invalid instance files exit with 1"""
        path = tmp_path / "bad.json"
        path.write_text('{"name": "bad", "n": }')
        assert run(["solve", str(path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_unscalable_times(self, tmp_path, capsys):
        """Truck times too fine for exact integer search exit with 1 instead of crashing"""
        data = instance_dict([[0, 0], [95.12345678901233, 0.0], [0.013333333333333334, 90.1]],
                             {1: {1: 3}}, m=1, s=1, name="fine")
        data["units"]["integer_times"] = False
        path = tmp_path / "fine.json"
        path.write_text(json.dumps(data))
        assert run(["solve", str(path)]) == 1
        assert "resolution" in capsys.readouterr().err


class TestCheck:

    def test_infeasible(self, toy_file, tmp_path, capsys):
        """Violations are listed and exit with 2"""
        path = tmp_path / "partial.json"
        path.write_text(serialize_solution(Solution(tours=[[1]])))
        assert run(["check", toy_file, str(path)]) == 2
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "infeasible, 3 violation(s)"
        assert lines[1].startswith("coverage customer 2:")

    def test_json_timeline(self, toy_file, tmp_path, capsys):
        """JSON output carries the timeline of a feasible solution"""
        path = tmp_path / "opt.json"
        path.write_text(serialize_solution(
            Solution(tours=[[1, 3]], missions={2: 1, 4: 1}, drone_sequences=[[4], [2]])))
        assert run(["check", toy_file, str(path), "--format", "json"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result['feasible'] is True
        assert result['violations'] == []
        assert result['timeline']['makespan'] == 12


class TestBound:

    def test_text(self, toy_file, capsys):
        """Cheapest missions give the fleet-work bound"""
        assert run(["bound", toy_file]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "drone_lb work=27 m=2 ceil=14 longest=12 bound=14"
        assert lines[1] == "root va=0 longest_mission=0 truck=6 customer_floor=7 value=7"

    def test_from_solution(self, toy_file, tmp_path, capsys):
        """Missions can come from a solution"""
        path = tmp_path / "opt.json"
        path.write_text(serialize_solution(
            Solution(tours=[[1, 3]], missions={2: 1, 4: 1}, drone_sequences=[[4], [2]])))
        assert run(["bound", toy_file, "--solution", str(path), "--format", "json"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result['drone_lb'] == {'work': 21, 'm': 2, 'va': 11, 'longest': 12, 'bound': 12}

    def test_infeasible_solution(self, toy_file, tmp_path):
        """Bounds of an infeasible solution are refused"""
        path = tmp_path / "bad.json"
        path.write_text(serialize_solution(Solution(tours=[[1, 2, 3, 4]], missions={1: 1},
                                                    drone_sequences=[[1], []])))
        assert run(["bound", toy_file, "--solution", str(path)]) == 2


class TestEmitAndImport:

    def test_emit_without_va(self, toy_file, capsys):
        """--no-va drops the fleet-work row"""
        assert run(["emit", toy_file, "--no-va"]) == 0
        text = capsys.readouterr().out
        assert " va:" not in text
        assert text.endswith("end\n")

    def test_emit_complete(self, toy_file, capsys):
        """Subtour rows up to n are requested on the command line"""
        assert run(["emit", toy_file, "--sec-mode", "all_up_to", "--sec-max", "4"]) == 0
        assert "all subtour elimination constraints present" in capsys.readouterr().out

    def test_emit_bad_big_m(self, toy_file):
        """A Big-M below the horizon is a usage error"""
        assert run(["emit", toy_file, "--big-m", "3"]) == 1

    def test_import(self, toy_file, tmp_path, capsys):
        """Assignments become solutions"""
        path = tmp_path / "toy.sol"
        path.write_text(TOY_OPTIMAL_ASSIGNMENT)
        assert run(["import", toy_file, str(path)]) == 0
        sol = parse_solution(capsys.readouterr().out)
        assert sol.missions == {2: 1, 4: 1}

    def test_import_subtour(self, toy_file, tmp_path):
        """Rejected assignments exit with 2"""
        path = tmp_path / "sub.sol"
        path.write_text("w_1_0_1 1\nw_1_1_0 1\nw_1_2_3 1\nw_1_3_2 1\n")
        assert run(["import", toy_file, str(path)]) == 2


class TestConvert:

    def test_convert(self, tmp_path, capsys):
        """Legacy tables convert to the canonical schema"""
        path = tmp_path / "five-c.txt"
        path.write_text("depot 0 0\n1 3 0 1.5 -\n2 0 4 2.0 9 5\n")
        assert run(["convert", str(path), "--m", "2"]) == 0
        inst = parse_instance(capsys.readouterr().out)
        assert inst.name == "five-c"
        assert (inst.n, inst.m, inst.s) == (2, 2, 1)

    def test_fleet_required(self, tmp_path):
        """The drone count has no default"""
        path = tmp_path / "five-c.txt"
        path.write_text("depot 0 0\n1 3 0 1.5 -\n")
        assert run(["convert", str(path)]) == 1


class TestBench:

    def test_deterministic_csv(self, bench_dir, capsys):
        """Reruns without timing are byte-identical"""
        assert run(["bench", str(bench_dir), "--iters", "10", "--omit-timing"]) == 0
        first = capsys.readouterr().out
        assert run(["bench", str(bench_dir), "--iters", "10", "--omit-timing", "--workers", "1"]) == 0
        assert capsys.readouterr().out == first
        lines = first.splitlines()
        assert len(lines) == 4
        assert [line.split(",")[0] for line in lines[1:]] == ["gen-4-2-1-0", "gen-4-2-1-1", "gen-4-2-1-2"]

    def test_excel_report(self, bench_dir, tmp_path, capsys):
        """The workbook holds one row per run"""
        workbook = tmp_path / "bench.xlsx"
        assert run(["bench", str(bench_dir), "--iters", "10", "--excel", str(workbook), "--format", "json"]) == 0
        records = json.loads(capsys.readouterr().out)
        assert len(records) == 3
        assert all(r['gap'] == 0.0 for r in records)
        runs = OutputHandler().load_excel(workbook)
        assert len(runs) == 3
        assert list(runs['instance']) == ["gen-4-2-1-0", "gen-4-2-1-1", "gen-4-2-1-2"]

    def test_empty_directory(self, tmp_path):
        """A directory without instances is a usage error"""
        assert run(["bench", str(tmp_path)]) == 1


class TestUsage:

    def test_no_subcommand(self, capsys):
        """A missing subcommand exits with 1"""
        assert run([]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_option(self, toy_file):
        """Unknown options exit with 1"""
        assert run(["solve", toy_file, "--frobnicate"]) == 1

    def test_run_record_gap(self):
        """Gaps are relative to the upper bound"""
        record = RunRecord("x", 1, 2, "exact", "feasible", 9, 12, None, 0)
        assert record.gap == 25.0
        assert RunRecord("x", 1, 2, "exact", "infeasible", None, None, None, 0).gap is None
