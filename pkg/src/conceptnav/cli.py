"""Command-line entry point: ``conceptnav {generate,fit,field,plan,eval,oracle}``.

Exit codes: 0 success, 1 verification failure, 2 invalid input,
3 unusable instruction, 4 planning infeasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from conceptnav.concepts import Instruction, emission_log_field, load_model, save_model
from conceptnav.dataset import has_assignments, read_training, write_training_csv
from conceptnav.errors import InstructionError, PlanningError, ValidationError
from conceptnav.fitting import Hyperparameters, assignment_report, fit_fixed_assignments, gibbs_sample
from conceptnav.gridmap import (
    DEFAULT_INFLATION_RADIUS,
    DEFAULT_ROBOT_RADIUS,
    build_costmap,
    export_field,
    read_map_files,
    write_map_files,
)
from conceptnav.harness import (
    aggregate,
    build_trials,
    format_table,
    load_experiment,
    loglik_series,
    method_id,
    run_experiment,
    table_csv,
)
from conceptnav.oracle import run_battery
from conceptnav.planning import BRUTE_FORCE_BUDGET, ActionSet, PlanRequest, viterbi_plan
from conceptnav.search import approx_plan, baseline_database, baseline_random, baseline_spatial_concept

log = logging.getLogger("conceptnav")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_INSTRUCTION, EXIT_PLANNING = 0, 1, 2, 3, 4
THREADS_ENV = "CONCEPTNAV_THREADS"
DEFAULT_STOP_WORDS = ("go", "to", "the", "please")


def bundled_scenario() -> Path:
    return Path(str(resources.files("conceptnav") / "data" / "home3.json"))


def _common(parser: argparse.ArgumentParser, seed=0) -> None:
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=seed)


def _map_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--map", required=True, help="occupancy grid PGM")
    parser.add_argument("--map-meta", required=True, help="map YAML metadata")
    parser.add_argument("--robot-radius", type=float, default=DEFAULT_ROBOT_RADIUS)
    parser.add_argument("--inflation-radius", type=float, default=DEFAULT_INFLATION_RADIUS)


def _instruction_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--say", nargs="+", required=True, metavar="WORD",
                        help="instruction words, e.g. --say go to the bedroom")
    parser.add_argument("--stop-words", nargs="*", default=list(DEFAULT_STOP_WORDS),
                        help="words dropped from the instruction")


def _action_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--actions", choices=("vonneumann", "moore"), default="vonneumann")
    parser.add_argument("--stay", dest="stay", action="store_true", default=True)
    parser.add_argument("--no-stay", dest="stay", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptnav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic home map and training data")
    _common(p)
    p.add_argument("--scenario", default=None, help="scenario JSON (default: bundled home)")
    p.add_argument("--resolution", type=float, default=None)

    p = sub.add_parser("fit", help="fit a spatial-concept model from training data")
    _common(p)
    p.add_argument("--train", required=True, help="training CSV or JSON")
    p.add_argument("--concepts", type=int, default=10, help="concept count for Gibbs fitting")
    p.add_argument("--positions", type=int, default=10, help="position distributions for Gibbs")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--gibbs", action="store_true", help="ignore labels and run Gibbs sampling")

    p = sub.add_parser("field", help="dump the emission log-likelihood field")
    _common(p)
    _map_args(p)
    _instruction_args(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("plan", help="plan a trajectory with one method")
    _common(p)
    _map_args(p)
    _instruction_args(p)
    _action_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--train", default=None, help="training data (methods db and random)")
    p.add_argument("--method", default="viterbi",
                   choices=("viterbi", "astar", "sc", "db", "random", "A", "B", "C", "D", "E"))
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--candidates", type=int, default=10)
    start = p.add_mutually_exclusive_group(required=True)
    start.add_argument("--start", nargs=2, type=float, metavar=("X", "Y"), help="start in meters")
    start.add_argument("--start-cell", nargs=2, type=int, metavar=("COL", "ROW"))
    p.add_argument("--dump-field", action="store_true")

    p = sub.add_parser("eval", help="run a multi-trial scenario and report NSR/Near-NSR/PL")
    _common(p, seed=None)
    p.add_argument("--scenario", default=None, help="scenario JSON (default: bundled home)")
    p.add_argument("--trials", type=int, default=None, help="override the trial count")

    p = sub.add_parser("oracle", help="check Viterbi against exhaustive enumeration")
    _common(p)
    _action_args(p)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--max-size", type=int, default=5)
    p.add_argument("--horizon", type=int, default=5, help="maximum horizon per instance")
    return parser


def _write(out: Path, name: str, data) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    return path


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _action_set(args) -> ActionSet:
    if args.actions == "moore":
        return ActionSet.moore(args.stay)
    return ActionSet.von_neumann(args.stay)


def _load_costmap(args):
    grid = read_map_files(args.map, args.map_meta)
    return build_costmap(grid, args.robot_radius, args.inflation_radius)


def _load_model(path):
    with open(path, "rb") as f:
        return load_model(f.read())


def _instruction(args) -> Instruction:
    instruction = Instruction.from_words(args.say, args.stop_words)
    if instruction.total == 0:
        raise InstructionError("instruction is empty after removing stop words")
    return instruction


def cmd_generate(args) -> int:
    spec = load_experiment(args.scenario or bundled_scenario())
    if args.resolution:
        spec.resolution = args.resolution
    scenario = build_trials(spec)[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_map_files(scenario.costmap.grid, out / "map.pgm", out / "map.yaml")
    _write(out, "train.csv", write_training_csv(scenario.training))
    regions = [{"name": r.name, "rect": list(r.rect), "anchor": list(r.anchor)} for r in scenario.regions]
    _write(out, "regions.json", _dump_json(regions))
    grid = scenario.costmap.grid
    print(f"map {grid.width}x{grid.height} resolution={grid.resolution} "
          f"records={len(scenario.training)} regions={len(regions)}")
    return EXIT_OK


def cmd_fit(args) -> int:
    records = read_training(args.train)
    hyper = Hyperparameters()
    if has_assignments(records) and not args.gibbs:
        model = fit_fixed_assignments(records, hyper)
        labels = ([r.concept_id for r in records], [r.position_id for r in records])
        mode = "fixed"
    else:
        model, c, i = gibbs_sample(records, hyper, args.concepts, args.positions, args.iters, args.seed)
        labels = (c.tolist(), i.tolist())
        mode = "gibbs"
    report = dict(assignment_report(*labels), mode=mode, seed=args.seed,
                  concepts=model.n_concepts, positions=model.n_positions,
                  vocabulary=len(model.vocabulary),
                  data_log_likelihood=model.data_log_likelihood(records))
    out = Path(args.out)
    _write(out, "model.json", save_model(model))
    _write(out, "fit_report.json", _dump_json(report))
    print(f"mode={mode} concepts={model.n_concepts} positions={model.n_positions} "
          f"words={len(model.vocabulary)} data_log_likelihood={report['data_log_likelihood']!r}")
    return EXIT_OK


def cmd_field(args) -> int:
    costmap = _load_costmap(args)
    model = _load_model(args.model)
    field = emission_log_field(model, costmap, _instruction(args))
    out = Path(args.out)
    north_up = np.flipud(field)
    _write(out, "field.csv", export_field(north_up, "csv"))
    _write(out, "field.pgm", export_field(north_up, "pgm"))
    finite = field[np.isfinite(field)]
    print(f"cells={field.size} finite={finite.size} max={finite.max()!r} min={finite.min()!r}")
    return EXIT_OK


def cmd_plan(args) -> int:
    costmap = _load_costmap(args)
    model = _load_model(args.model)
    grid = costmap.grid
    start = tuple(args.start_cell) if args.start_cell else grid.world_to_cell(*args.start)
    actions = _action_set(args)
    request = PlanRequest(start, args.horizon, _instruction(args), actions)
    method = method_id(args.method)
    field = emission_log_field(model, costmap, request.instruction)
    t0 = time.perf_counter()
    if method == "A":
        traj = viterbi_plan(request, model, costmap)
        traj.method = "A"
        traj.provenance = {"method": "A"}
    elif method == "B":
        traj = approx_plan(request, model, costmap, args.candidates)
    elif method == "C":
        traj = baseline_spatial_concept(request, model, costmap)
    else:
        if not args.train:
            raise ValidationError(f"method {args.method} needs --train")
        records = read_training(args.train)
        planner = baseline_database if method == "D" else baseline_random
        traj = planner(request, records, costmap, args.seed, field)
    elapsed = time.perf_counter() - t0
    doc = traj.to_dict(costmap, actions)
    doc["horizon"] = args.horizon
    doc["start"] = list(start)
    doc["instruction"] = request.instruction.counts
    doc["action_set"] = list(actions.names)
    out = Path(args.out)
    _write(out, "trajectory.json", _dump_json(doc))
    if args.dump_field:
        _write(out, "field.csv", export_field(np.flipud(field), "csv"))
        _write(out, "field.pgm", export_field(np.flipud(field), "pgm"))
    print(f"method={method} cumulative_log_likelihood={traj.cumulative_log_likelihood!r} "
          f"path_length={traj.path_length(actions)} steps={len(traj)}")
    print(f"elapsed_seconds={elapsed:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    spec = load_experiment(args.scenario or bundled_scenario())
    if args.trials:
        spec.trials = args.trials
    if args.seed is not None:
        spec.seed = args.seed
    workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    results = run_experiment(spec, workers)
    table = aggregate(results)
    out = Path(args.out)
    text = format_table(table)
    _write(out, "metrics.txt", text)
    _write(out, "metrics.csv", table_csv(table))
    _write(out, "results.json", _dump_json({
        "trials": spec.trials,
        "horizon": spec.horizon,
        "seed": spec.seed,
        "path_length_averages": "successful trials only",
        "results": [r.to_dict() for r in results],
    }))
    _write(out, "loglik.csv", loglik_series(results, spec.horizon))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    actions = _action_set(args)
    if len(actions) ** args.horizon > BRUTE_FORCE_BUDGET:
        raise ValidationError(
            f"{len(actions)}^{args.horizon} action sequences exceed the budget of {BRUTE_FORCE_BUDGET}"
        )
    report = run_battery(args.instances, args.max_size, args.horizon, args.seed, actions)
    out = Path(args.out)
    _write(out, "oracle_report.json", _dump_json({
        "passed": report.passed,
        "instances": report.instances,
        "max_abs_discrepancy": report.max_abs_discrepancy,
        "tie_mismatches": report.tie_mismatches,
        "failures": report.failures,
    }))
    print(report.summary())
    for failure in report.failures:
        print(failure)
    return EXIT_OK if report.passed else EXIT_VERIFY


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "field": cmd_field,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        try:
            return COMMANDS[args.command](args)
        except InstructionError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INSTRUCTION
        except PlanningError as exc:
            print(f"error ({exc.reason}): {exc}", file=sys.stderr)
            return EXIT_PLANNING
        except (ValidationError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
