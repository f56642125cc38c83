"""
Command-line entry point: python cli.py <subcommand> [options]

Machine-readable results go to stdout (or --out), diagnostics to stderr.
Exit codes: 0 success, 1 usage or unreadable input, 2 infeasible solution
or rejected import, 3 internal limit (budget exhausted, size cap).
"""
import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from tqdm import tqdm

from emit import EmitterConfig, EmitterConfigError, MilpImportError, emit_milp, import_milp_solution
from env_config import get_section, load_config, setup_logging
from exact import (ExactBudget, MalformedSolutionError, SizeCapError, SolveOutcome, SolveStatus,
                   root_bounds, solve_exact)
from excel_generator import RUN_COLUMNS, gap_percent
from heuristic import SearchConfig, SearchConfigError, TraceEntry, best_found_ms, construct, ruin_recreate
from instance import (GeneratorConfig, GeneratorConfigError, Instance, InstanceError, Time,
                      convert_legacy_text, generate_instance, load_instance, serialize_instance, time_to_json,
                      with_fleet)
from output_handler import OutputHandler, dumps_json, records_to_csv
from scheduler import CapExceededError, InfeasibleMissionError, MissionSet, drone_lb
from solution import (InfeasibleSolutionError, SolutionFormatError, UnknownCustomerError, check, evaluate,
                      load_solution, makespan, serialize_solution, solution_to_dict)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_LIMIT = 3


class UsageError(Exception):
    """Raised for command lines that do not match a subcommand grammar"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class RunRecord:
    """One solver run, in the column order of the bench CSV; best_ms is the optional trailing column"""
    instance: str
    s: int
    m: int
    solver: str
    status: str
    lb: Any
    ub: Any
    wall_ms: Optional[int]
    seed: int
    best_ms: Optional[int] = None

    @classmethod
    def from_outcome(cls, instance: Instance, solver: str, outcome: SolveOutcome,
                     wall_ms: Optional[int], seed: int, omit_timing: bool = False) -> "RunRecord":
        return cls(
            instance=instance.name, s=instance.s, m=instance.m, solver=solver,
            status=outcome.status.value,
            lb=None if outcome.lb is None else time_to_json(outcome.lb),
            ub=None if outcome.ub is None else time_to_json(outcome.ub),
            wall_ms=wall_ms, seed=seed,
            best_ms=None if omit_timing else outcome.stats.get('best_ms'),
        )

    @property
    def gap(self) -> Optional[float]:
        return gap_percent(self.lb, self.ub)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _load(args) -> Instance:
    inst = load_instance(args.instance)
    if getattr(args, 's', None) or getattr(args, 'm', None):
        inst = with_fleet(inst, m=args.m, s=args.s)
    return inst


def _write(args, text: str) -> None:
    if getattr(args, 'out', None):
        OutputHandler().save_text(text, args.out)
    else:
        sys.stdout.write(text)


def _run_columns(args) -> List[str]:
    return RUN_COLUMNS + ['best_ms'] if args.best_time else RUN_COLUMNS


def _search_config(args, config: Dict[str, Any]) -> SearchConfig:
    return SearchConfig.from_dict(get_section('heuristic', config), iterations=args.iters,
                                  ruin_fraction=args.ruin, seed=args.seed,
                                  time_limit_ms=args.time_limit_ms)


def _exact_budget(args, config: Dict[str, Any]) -> ExactBudget:
    scheduler = get_section('scheduler', config)
    return ExactBudget.from_dict(get_section('exact', config), node_limit=args.node_limit,
                                 time_limit_ms=args.time_limit_ms, seed=args.seed,
                                 warm_start_iterations=args.iters,
                                 exact_cap=scheduler.get('exact_cap'),
                                 scheduler_node_limit=scheduler.get('node_limit'))


def solve_heuristic(instance: Instance, cfg: SearchConfig, depot_ready: Time = 0) -> SolveOutcome:
    """Ruin & recreate from the construction heuristic; lb from the root bounds"""
    started = time.perf_counter()
    start = construct(instance, cfg)
    constructed_ms = int((time.perf_counter() - started) * 1000)
    trace: List[TraceEntry] = []
    sol = ruin_recreate(instance, start, cfg, trace)
    ub = makespan(instance, sol)
    lb = min(root_bounds(instance, ub=ub).value, ub)
    status = SolveStatus.OPTIMAL if lb == ub else SolveStatus.FEASIBLE
    stats = {'nodes': 0, 'time_ms': int((time.perf_counter() - started) * 1000),
             'best_ms': best_found_ms(trace, ub, makespan(instance, start), constructed_ms),
             'prunes_by_va': 0, 'prunes_by_incumbent': 0}
    return SolveOutcome(status, depot_ready + lb, depot_ready + ub, sol, stats)


def _solve(instance: Instance, args, config: Dict[str, Any]) -> SolveOutcome:
    depot_ready = get_section('solution', config).get('depot_ready', 0)
    if args.solver == 'exact':
        return solve_exact(instance, _exact_budget(args, config), depot_ready)
    return solve_heuristic(instance, _search_config(args, config), depot_ready)


def cmd_solve(args, config) -> int:
    instance = _load(args)
    started = time.perf_counter()
    outcome = _solve(instance, args, config)
    wall_ms = None if args.omit_timing else int((time.perf_counter() - started) * 1000)

    if args.solution_out and outcome.incumbent is not None:
        OutputHandler().save_text(serialize_solution(outcome.incumbent), args.solution_out)
    record = RunRecord.from_outcome(instance, args.solver, outcome, wall_ms, args.seed, args.omit_timing)
    if args.format == 'csv':
        _write(args, records_to_csv([record.to_dict()], _run_columns(args)))
    else:
        result = outcome.to_dict(instance)
        result.update({'solver': args.solver, 'seed': args.seed, 'gap': record.gap,
                       'prunes_by_va': outcome.stats['prunes_by_va'],
                       'prunes_by_incumbent': outcome.stats['prunes_by_incumbent']})
        if args.omit_timing:
            result['time_ms'] = None
            result['best_ms'] = None
        if outcome.incumbent is not None:
            result['solution'] = solution_to_dict(outcome.incumbent)
        _write(args, dumps_json(result))
    return EXIT_LIMIT if outcome.status == SolveStatus.BUDGET_EXHAUSTED else EXIT_OK


def cmd_check(args, config) -> int:
    instance = _load(args)
    sol = load_solution(args.solution)
    violations = check(instance, sol)
    depot_ready = get_section('solution', config).get('depot_ready', 0)
    if args.format == 'json':
        result = {'feasible': not violations, 'violations': [v.to_dict() for v in violations]}
        if not violations:
            result['timeline'] = evaluate(instance, sol, depot_ready).to_dict()
        _write(args, dumps_json(result))
    elif violations:
        lines = [f"infeasible, {len(violations)} violation(s)"]
        lines += [f"{v.kind.value} {v.subject}: {v.detail}" for v in violations]
        _write(args, "\n".join(lines) + "\n")
    else:
        value = makespan(instance, sol, depot_ready)
        _write(args, f"feasible, makespan={time_to_json(value)}\n")
    return EXIT_INFEASIBLE if violations else EXIT_OK


def cmd_bound(args, config) -> int:
    instance = _load(args)
    if args.solution:
        sol = load_solution(args.solution)
        violations = check(instance, sol)
        if violations:
            raise InfeasibleSolutionError(violations)
        missions = dict(sol.missions)
    else:
        # Cheapest drone work of every drone-eligible customer
        missions = {j: min(instance.group_sizes(j), key=lambda k: (k * instance.drone_time[(j, k)], k))
                    for j in instance.drone_customers}
    bound = drone_lb(MissionSet.from_assignment(instance, missions))
    report = root_bounds(instance)
    if args.format == 'json':
        result = {
            'drone_lb': {'work': bound.work, 'm': bound.m, 'va': bound.va,
                         'longest': bound.longest, 'bound': bound.value},
            'root': report.to_dict(),
        }
        _write(args, dumps_json(result))
    else:
        root = report.to_dict()
        _write(args,
               f"drone_lb work={bound.work} m={bound.m} ceil={bound.va} "
               f"longest={bound.longest} bound={bound.value}\n"
               f"root va={root['va']} longest_mission={root['longest_mission']} truck={root['truck']} "
               f"customer_floor={root['customer_floor']} value={root['value']}\n")
    return EXIT_OK


def cmd_gen(args, config) -> int:
    defaults = get_section('instance', config)
    cfg = GeneratorConfig.from_dict(get_section('generator', config), n=args.n, m=args.m, s=args.s,
                                    truck_speed_kmh=defaults.get('truck_speed_kmh'),
                                    integer_times=defaults.get('integer_times'), name=args.name)
    _write(args, serialize_instance(generate_instance(cfg, args.seed)))
    return EXIT_OK


def cmd_emit(args, config) -> int:
    instance = _load(args)
    overrides = {'sec_mode': args.sec_mode, 'sec_max': args.sec_max, 'big_M': args.big_m,
                 'depot_ready': get_section('solution', config).get('depot_ready')}
    if args.no_va:
        overrides['include_va'] = False
    cfg = EmitterConfig.from_dict(get_section('emit', config), **overrides)
    _write(args, emit_milp(instance, cfg))
    return EXIT_OK


def cmd_import(args, config) -> int:
    instance = _load(args)
    with open(args.assignment, "r") as f:
        text = f.read()
    sol = import_milp_solution(text, instance)
    _write(args, serialize_solution(sol))
    return EXIT_OK


def cmd_convert(args, config) -> int:
    with open(args.legacy, "r") as f:
        text = f.read()
    defaults = get_section('instance', config)
    name = args.name or Path(args.legacy).stem
    integer_times = defaults.get('integer_times', True) and not args.fractional_times
    inst = convert_legacy_text(text, name, m=args.m, s=args.s, integer_times=integer_times,
                               speed_kmh=defaults.get('truck_speed_kmh', 30))
    _write(args, serialize_instance(inst))
    return EXIT_OK


def _bench_one(path: Path, args, config) -> RunRecord:
    instance = load_instance(path)
    if args.s or args.m:
        instance = with_fleet(instance, m=args.m, s=args.s)
    started = time.perf_counter()
    outcome = _solve(instance, args, config)
    wall_ms = None if args.omit_timing else int((time.perf_counter() - started) * 1000)
    logger.info(f"Bench {instance.name}: {outcome.status.value} [{outcome.lb}, {outcome.ub}]")
    return RunRecord.from_outcome(instance, args.solver, outcome, wall_ms, args.seed, args.omit_timing)


def cmd_bench(args, config) -> int:
    paths = sorted(Path(args.directory).glob("*.json"))
    if not paths:
        raise UsageError(f"no instance files (*.json) in {args.directory}")
    for path in paths:
        load_instance(path)
    workers = args.workers or get_section('bench', config).get('workers', 1)

    records: List[RunRecord] = []
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(_bench_one, path, args, config): path for path in paths}
        for future in tqdm(as_completed(futures), total=len(futures), desc="bench", file=sys.stderr):
            records.append(future.result())
    records.sort(key=lambda r: r.instance)

    rows = [r.to_dict() for r in records]
    if args.excel:
        OutputHandler().save_excel(rows, args.excel)
    if args.format == 'json':
        _write(args, dumps_json([dict(row, gap=r.gap) for row, r in zip(rows, records)]))
    else:
        _write(args, records_to_csv(rows, _run_columns(args)))
    return EXIT_OK


def _add_fleet(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--s', type=int, default=None, help='Number of trucks (re-targets the instance)')
    parser.add_argument('--m', type=int, default=None, help='Number of drones (re-targets the instance)')


def _add_search(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--solver', choices=['exact', 'heuristic'], default='exact')
    parser.add_argument('--seed', type=int, default=0, help='Search seed (default: 0)')
    parser.add_argument('--time-limit-ms', dest='time_limit_ms', type=int, default=None,
                        help='Wall-clock limit; best-so-far results are reported when it expires')
    parser.add_argument('--node-limit', dest='node_limit', type=int, default=None,
                        help='Branch-and-bound node budget')
    parser.add_argument('--iters', type=int, default=None, help='Ruin & recreate iterations')
    parser.add_argument('--ruin', type=float, default=None, help='Fraction of customers removed per iteration')
    parser.add_argument('--omit-timing', dest='omit_timing', action='store_true',
                        help='Leave timing cells empty so reruns are byte-identical')
    parser.add_argument('--best-time', dest='best_time', action='store_true',
                        help='Add a best_ms column: when the reported solution was first found')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='cli.py', description='Collective-drone truck/drone routing solvers')
    parser.add_argument('--config', default=None, help='YAML configuration file')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    def command(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument('--out', default=None, help='Write the result to PATH instead of stdout')
        return p

    p = command('solve', cmd_solve, 'Solve one instance')
    p.add_argument('instance')
    _add_fleet(p)
    _add_search(p)
    p.add_argument('--format', choices=['json', 'csv'], default='json')
    p.add_argument('--solution-out', dest='solution_out', default=None, help='Save the incumbent solution')

    p = command('check', cmd_check, 'Check a solution and print its makespan')
    p.add_argument('instance')
    p.add_argument('solution')
    _add_fleet(p)
    p.add_argument('--format', choices=['text', 'json'], default='text')

    p = command('bound', cmd_bound, 'Print the fleet-work bound and the root bounds')
    p.add_argument('instance')
    p.add_argument('--solution', default=None, help='Take the missions from this solution')
    _add_fleet(p)
    p.add_argument('--format', choices=['text', 'json'], default='text')

    p = command('gen', cmd_gen, 'Generate a random instance')
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--s', type=int, default=None)
    p.add_argument('--m', type=int, default=None)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--name', default=None)

    p = command('emit', cmd_emit, 'Write the MILP in LP format')
    p.add_argument('instance')
    _add_fleet(p)
    p.add_argument('--no-va', dest='no_va', action='store_true', help='Leave out the fleet-work row')
    p.add_argument('--sec-mode', dest='sec_mode', choices=['none', 'pairs_and_triples', 'all_up_to'],
                   default=None)
    p.add_argument('--sec-max', dest='sec_max', type=int, default=None)
    p.add_argument('--big-m', dest='big_m', type=int, default=None)

    p = command('import', cmd_import, 'Turn a solver assignment into a solution')
    p.add_argument('instance')
    p.add_argument('assignment')
    _add_fleet(p)

    p = command('bench', cmd_bench, 'Solve every instance of a directory')
    p.add_argument('directory')
    _add_fleet(p)
    _add_search(p)
    p.add_argument('--format', choices=['csv', 'json'], default='csv')
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--excel', default=None, help='Also write the bench workbook to PATH')

    p = command('convert', cmd_convert, 'Convert a whitespace benchmark table')
    p.add_argument('legacy')
    p.add_argument('--m', type=int, required=True)
    p.add_argument('--s', type=int, default=1)
    p.add_argument('--name', default=None)
    p.add_argument('--fractional-times', dest='fractional_times', action='store_true',
                   help='Keep exact truck times instead of whole minutes')
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand

    Args:
        argv: arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    config = load_config(args.config)
    setup_logging(config)
    try:
        return args.handler(args, config)
    except (InfeasibleSolutionError, MilpImportError, MalformedSolutionError,
            UnknownCustomerError, InfeasibleMissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SizeCapError, CapExceededError) as e:
        print(f"limit: {e}", file=sys.stderr)
        return EXIT_LIMIT
    except (UsageError, InstanceError, SolutionFormatError, GeneratorConfigError, SearchConfigError,
            EmitterConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
