"""
Command-line front end.

    python main.py kernel --regular 2 2 --level 1 --t 1.0 --pairs pairs.json
    python main.py bounds --regular 2 2 --t-grid 0.01:10:log25
    python main.py verify --regular 2 2 --levels 2 --seed 42
    python main.py semigroup --regular 2 2 --level 1 --t-grid 0.1,1.0 --input f.csv

Settings resolve as packaged defaults < --config JSON file < flags given on
the command line. Every command writes its artifact into the output
directory (DIAMOND_HEAT_OUTPUT_DIR unless --output is given).
"""
import argparse
import csv
import json
import logging
import os
import sys
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .estimates import bounds_table, optimal_logsob_delta
from .exceptions import DiamondHeatError, InvalidArgumentError
from .geometry import PointAddress, distance_limit, distance_sandwich, extend_point, project, random_point
from .kernels import KernelEvalConfig, evaluate_batch, parse_point, write_kernel_csv
from .params import ParameterSequences, Verdict, check_assumption
from .semigroup import apply_semigroup, load_csv, total_integral
from .settings import DEFAULT_SEED, LOG_LEVEL, OUTPUT_DIR, configure_logging, run_defaults
from .verify import CHECKS, VerifyConfig, oracle_compare, run_suite, summarize, write_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

OUTPUT_FILES = {
    "kernel": "kernel_values.csv",
    "bounds": "bounds.csv",
    "verify": "verify_report.json",
    "oracle-compare": "oracle_compare.csv",
    "distance": "distances.csv",
    "assumption": "assumption.json",
    "semigroup": "semigroup_values.csv",
}


class Command(str, Enum):
    KERNEL = "kernel"
    BOUNDS = "bounds"
    VERIFY = "verify"
    ORACLE_COMPARE = "oracle-compare"
    DISTANCE = "distance"
    ASSUMPTION = "assumption"
    SEMIGROUP = "semigroup"


def parse_grid(text: str) -> List[float]:
    """`a:b:logN`, `a:b:linN` or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        try:
            start, stop, spacing = text.split(":")
            start, stop = float(start), float(stop)
            if spacing.startswith("log"):
                if start <= 0 or stop <= 0:
                    raise InvalidArgumentError(f"log grids need positive end points: {text!r}")
                return [float(v) for v in np.logspace(np.log10(start), np.log10(stop), int(spacing[3:]))]
            if spacing.startswith("lin"):
                return [float(v) for v in np.linspace(start, stop, int(spacing[3:]))]
        except ValueError as e:
            raise InvalidArgumentError(f"malformed grid {text!r}: {str(e)}") from e
        raise InvalidArgumentError(f"grid spacing must be logN or linN, got {text!r}")
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise InvalidArgumentError(f"malformed grid {text!r}: {str(e)}") from e


class RunConfig(BaseModel):
    """Validated settings of one command-line run."""

    model_config = ConfigDict(extra="forbid")

    command: Command
    params: Dict[str, Any]
    level: int = 1
    levels: int = 2
    t_grid: List[float]
    delta_grid: List[float]
    m: int = 200
    m_values: Optional[List[int]] = None
    tol: float = 1e-12
    rep_switch: float = 1.0
    max_terms: int = 10000
    samples: int = 50
    triples: int = 1000
    walk_samples: int = 100000
    jobs: int = 1
    limit: bool = False
    seed: int = DEFAULT_SEED
    output: str = OUTPUT_DIR
    pairs: Optional[str] = None
    input: Optional[str] = None
    checks: Optional[List[str]] = None

    @field_validator("t_grid", "delta_grid", mode="before")
    @classmethod
    def _grid(cls, value: Any) -> Any:
        return parse_grid(value) if isinstance(value, str) else value

    @field_validator("t_grid", "delta_grid")
    @classmethod
    def _positive_grid(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid must not be empty")
        if any(not v > 0 for v in value):
            raise ValueError(f"grid values must be positive, got {value}")
        return value

    @field_validator("level")
    @classmethod
    def _level(cls, value: int) -> int:
        if value < 0:
            raise ValueError(f"level must be >= 0, got {value}")
        return value

    @field_validator("levels", "jobs", "samples", "triples", "walk_samples")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("m")
    @classmethod
    def _grid_size(cls, value: int) -> int:
        if value < 3:
            raise ValueError(f"m must be >= 3, got {value}")
        return value

    @field_validator("tol", "rep_switch")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"must be positive, got {value}")
        return value

    @field_validator("checks")
    @classmethod
    def _known_checks(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        known = {name for name, _ in CHECKS}
        unknown = sorted(set(value or ()) - known)
        if unknown:
            raise ValueError(f"unknown checks {unknown}; choose from {sorted(known)}")
        return value

    @model_validator(mode="after")
    def _check_params(self) -> "RunConfig":
        ParameterSequences.from_mapping(self.params)
        return self

    @property
    def sequences(self) -> ParameterSequences:
        return ParameterSequences.from_mapping(self.params)

    @property
    def kernel_config(self) -> KernelEvalConfig:
        return KernelEvalConfig(tol=self.tol, rep_switch=self.rep_switch, max_terms=self.max_terms)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    group = common.add_argument_group("parameter sequences")
    group.add_argument("--regular", nargs=2, type=int, metavar=("J", "N"), help="regular j-n diamond")
    group.add_argument("--j", nargs="+", type=int, help="explicit j_1, j_2, ...")
    group.add_argument("--n", nargs="+", type=int, help="explicit n_1, n_2, ...")
    group.add_argument("--tail-j", dest="tail_j", type=int, help="j_l beyond the explicit prefix")
    group.add_argument("--tail-n", dest="tail_n", type=int, help="n_l beyond the explicit prefix")

    common.add_argument("--config", help="JSON file with run settings")
    common.add_argument("--level", type=int, help="truncation level i")
    common.add_argument("--levels", type=int, help="deepest level used by verify")
    common.add_argument("--t", type=float, help="a single time")
    common.add_argument("--t-grid", dest="t_grid", help="times: a:b:logN, a:b:linN or a,b,c")
    common.add_argument("--delta-grid", dest="delta_grid", help="log-Sobolev deltas, same syntax")
    common.add_argument("--m", type=int, help="samples per branch")
    common.add_argument("--m-values", dest="m_values", nargs="+", type=int, help="resolutions for oracle-compare")
    common.add_argument("--tol", type=float, help="absolute truncation tolerance")
    common.add_argument("--samples", type=int, help="random pairs or probes when none are listed")
    common.add_argument("--triples", type=int, help="sampled triples in the Lipschitz check")
    common.add_argument("--walk-samples", dest="walk_samples", type=int, help="walkers in the random-walk oracle")
    common.add_argument("--pairs", help="JSON file [[[theta, [labels]], [theta, [labels]]], ...]")
    common.add_argument("--input", help="grid function CSV (branch, index, theta, value) for semigroup")
    common.add_argument("--checks", nargs="+", help="run only these verify checks")
    common.add_argument("--limit", action="store_true", help="use F_inf instead of F_level")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--jobs", type=int, help="worker threads")
    common.add_argument("--output", help="output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(prog="diamond_heat", description="Heat kernels on generalized diamond fractals")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, help_text in (
        (Command.KERNEL, "evaluate kernel values for listed or random pairs"),
        (Command.BOUNDS, "tabulate the explicit constants over a t-grid"),
        (Command.VERIFY, "run the numerical check suite"),
        (Command.ORACLE_COMPARE, "closed form vs the cable spectral oracle"),
        (Command.DISTANCE, "geodesic distances on F_i (and F_inf with --limit)"),
        (Command.ASSUMPTION, "admissibility report of N_i exp(-J_i^2 t) over a t-grid"),
        (Command.SEMIGROUP, "apply P_t on F_level to a grid function read from --input"),
    ):
        subparsers.add_parser(command.value, parents=[common], help=help_text)
    return parser


def _load_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidArgumentError(f"cannot read config file {path}: {str(e)}") from e
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"config file {path} must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Packaged defaults, then the --config file, then the flags that were actually given."""
    flags = vars(args).copy()
    flags.pop("verbose", None)
    flags.pop("quiet", None)
    merged: Dict[str, Any] = run_defaults()
    config_path = flags.pop("config", None)
    if config_path:
        file_data = _load_config_file(config_path)
        params = dict(merged["params"])
        if "params" in file_data:
            params = dict(file_data.pop("params"))
        merged.update(file_data)
        merged["params"] = params

    params = dict(merged["params"])
    if "regular" in flags:
        params = {"regular": flags.pop("regular")}
    for key in ("j", "n", "tail_j", "tail_n"):
        if key in flags:
            params.pop("regular", None)
            params[key] = flags.pop(key)
    merged["params"] = params
    if "t" in flags:
        merged["t_grid"] = [flags.pop("t")]
    merged.update(flags)
    return RunConfig(**merged)


def _load_pairs(config: RunConfig, seq: ParameterSequences, level: int,
                rng: np.random.Generator) -> List[Tuple[PointAddress, PointAddress]]:
    if config.pairs is None:
        return [(random_point(seq, level, rng), random_point(seq, level, rng)) for _ in range(config.samples)]
    try:
        with open(config.pairs) as handle:
            raw = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidArgumentError(f"cannot read pairs file {config.pairs}: {str(e)}") from e
    pairs = []
    for entry in raw:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise InvalidArgumentError(f"each pair must be [point, point], got {entry!r}")
        pairs.append((parse_point(seq, entry[0]), parse_point(seq, entry[1])))
    if not pairs:
        raise InvalidArgumentError(f"pairs file {config.pairs} is empty")
    return pairs


def _at_level(seq: ParameterSequences, p: PointAddress, level: int) -> PointAddress:
    return project(extend_point(seq, p, level), level)


def _write_rows(rows: Sequence[Dict[str, Any]], header: Sequence[str], path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header))
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (repr(value) if isinstance(value, float) else value) for key, value in row.items()})
    return path


def _write_json(payload: Any, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def _print_table(rows: Sequence[Dict[str, Any]], columns: Sequence[str], limit: int = 20) -> None:
    print("  ".join(f"{c:>14}" for c in columns))
    for row in rows[:limit]:
        cells = []
        for c in columns:
            value = row.get(c)
            cells.append(f"{value:>14.6g}" if isinstance(value, float) else f"{str(value):>14}")
        print("  ".join(cells))
    if len(rows) > limit:
        print(f"... {len(rows) - limit} more rows")


def run_kernel(config: RunConfig) -> Dict[str, Any]:
    seq = config.sequences
    rng = np.random.default_rng(config.seed)
    pairs = _load_pairs(config, seq, config.level, rng)
    level = None if config.limit else config.level
    rows = evaluate_batch(seq, level, config.t_grid, pairs, config.kernel_config, jobs=config.jobs)
    path = write_kernel_csv(rows, os.path.join(config.output, OUTPUT_FILES["kernel"]))
    _print_table(rows, ["t", "theta_x", "labels_x", "theta_y", "labels_y", "value", "certified_error"])
    return {"status": "success", "output": path, "rows": len(rows)}


def run_bounds(config: RunConfig) -> Dict[str, Any]:
    seq = config.sequences
    rows = bounds_table(seq, config.t_grid, config.tol)
    path = _write_rows(rows, list(rows[0].keys()), os.path.join(config.output, OUTPUT_FILES["bounds"]))
    _print_table(rows, list(rows[0].keys()))
    delta, value = optimal_logsob_delta(seq, tol=config.tol)
    print(f"optimal log-Sobolev delta {delta:.6g}: M = {value:.6g}")
    return {"status": "success", "output": path, "rows": len(rows), "optimal_delta": delta}


def run_verify(config: RunConfig) -> Dict[str, Any]:
    seq = config.sequences
    verify_config = VerifyConfig(
        m=config.m,
        pairs=config.samples,
        triples=config.triples,
        walk_samples=config.walk_samples,
        seed=config.seed,
        jobs=config.jobs,
        delta_grid=tuple(config.delta_grid),
        kernel=config.kernel_config,
    )
    results = run_suite(seq, config.levels, config.t_grid, verify_config, only=config.checks)
    path = write_report(results, os.path.join(config.output, OUTPUT_FILES["verify"]), seq, config.seed)
    for result in results:
        measured = "-" if result.measured is None else f"{result.measured:.6g}"
        bound = "-" if result.bound is None else f"{result.bound:.6g}"
        print(f"{result.status.value:>13}  {result.name:<40} {measured:>14} {bound:>14}")
    summary = summarize(results)
    print(f"{summary['passed']} passed, {summary['failed']} failed, {summary['informational']} informational")
    status = "success" if summary["failed"] == 0 else "failed"
    return {"status": status, "output": path, **summary}


def run_oracle_compare(config: RunConfig) -> Dict[str, Any]:
    seq = config.sequences
    rng = np.random.default_rng(config.seed)
    m_values = config.m_values or [config.m, 2 * config.m - 1]
    rows = []
    for t in config.t_grid:
        rows.extend(oracle_compare(seq, config.level, t, m_values, config.samples, rng, config.kernel_config))
    path = _write_rows(rows, ["level", "m", "t", "sup_error", "order"],
                       os.path.join(config.output, OUTPUT_FILES["oracle-compare"]))
    _print_table(rows, ["level", "m", "t", "sup_error", "order"])
    return {"status": "success", "output": path, "rows": len(rows)}


def run_distance(config: RunConfig) -> Dict[str, Any]:
    seq = config.sequences
    rng = np.random.default_rng(config.seed)
    level = config.level
    header = ["theta_x", "labels_x", "theta_y", "labels_y", "level", "lower", "distance", "upper"]
    if config.limit:
        header += ["distance_limit", "limit_error", "limit_level"]
    rows = []
    for x, y in _load_pairs(config, seq, level, rng):
        x_level, y_level = _at_level(seq, x, level), _at_level(seq, y, level)
        lower, value, upper = distance_sandwich(seq, x_level, y_level, level)
        row = {
            "theta_x": x.theta,
            "labels_x": "-".join(str(w) for w in x.labels),
            "theta_y": y.theta,
            "labels_y": "-".join(str(w) for w in y.labels),
            "level": level,
            "lower": lower,
            "distance": value,
            "upper": upper,
        }
        if config.limit:
            certified = distance_limit(seq, x, y, max(config.tol, 1e-12))
            row.update(distance_limit=certified.value, limit_error=certified.error, limit_level=certified.level)
        rows.append(row)
    path = _write_rows(rows, header, os.path.join(config.output, OUTPUT_FILES["distance"]))
    _print_table(rows, header)
    return {"status": "success", "output": path, "rows": len(rows)}


def run_assumption(config: RunConfig) -> Dict[str, Any]:
    seq = config.sequences
    report = check_assumption(seq, config.t_grid)
    path = _write_json(report.model_dump(mode="json"), os.path.join(config.output, OUTPUT_FILES["assumption"]))
    for entry in report.entries:
        print(f"t={entry.t:<12.6g} {entry.verdict.value:<13} sup at level {entry.sup_level}: {entry.trend}")
    print(f"overall: {report.overall.value}")
    status = "failed" if report.overall == Verdict.FAIL else "success"
    return {"status": status, "output": path, "verdict": report.overall.value}



def run_semigroup(config: RunConfig) -> Dict[str, Any]:
    if config.input is None:
        raise InvalidArgumentError("semigroup needs --input with a grid function CSV")
    seq = config.sequences
    f = load_csv(seq, config.level, config.input)
    thetas = f.layout.thetas
    rows = []
    for t in config.t_grid:
        evolved = apply_semigroup(f, t, config.kernel_config, jobs=config.jobs)
        for branch in range(evolved.values.shape[0]):
            for index in range(evolved.m):
                rows.append({
                    "t": t,
                    "branch": branch,
                    "index": index,
                    "theta": float(thetas[branch, index]),
                    "value": float(evolved.values[branch, index]),
                })
        print(f"t={t:<12.6g} mass {total_integral(evolved):.12g}  max {float(evolved.values.max()):.6g}")
    path = _write_rows(rows, ["t", "branch", "index", "theta", "value"],
                       os.path.join(config.output, OUTPUT_FILES["semigroup"]))
    return {"status": "success", "output": path, "rows": len(rows)}


HANDLERS = {
    Command.KERNEL: run_kernel,
    Command.BOUNDS: run_bounds,
    Command.VERIFY: run_verify,
    Command.ORACLE_COMPARE: run_oracle_compare,
    Command.DISTANCE: run_distance,
    Command.ASSUMPTION: run_assumption,
    Command.SEMIGROUP: run_semigroup,
}


def dispatch(config: RunConfig) -> Dict[str, Any]:
    logger.info(f"🔍 {config.command.value} on {config.sequences.describe()}")
    try:
        result = HANDLERS[config.command](config)
    except (InvalidArgumentError, ValidationError) as e:
        logger.error(f"❌ Invalid input for {config.command.value}: {str(e)}")
        return {"status": "invalid", "message": str(e)}
    except DiamondHeatError as e:
        logger.error(f"❌ {config.command.value} failed: {str(e)}")
        return {"status": "error", "message": str(e)}
    if result["status"] == "success":
        logger.info(f"✅ {config.command.value} wrote {result['output']}")
    return result


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    level_name = "DEBUG" if getattr(args, "verbose", False) else "WARNING" if getattr(args, "quiet", False) else LOG_LEVEL
    configure_logging(level_name)

    try:
        config = resolve_config(args)
    except (ValidationError, InvalidArgumentError) as e:
        logger.error(f"❌ Invalid configuration: {str(e)}")
        parser.print_usage(sys.stderr)
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_USAGE

    result = dispatch(config)
    if result["status"] == "invalid":
        print(f"error: {result['message']}", file=sys.stderr)
        return EXIT_USAGE
    if result["status"] == "error":
        print(f"error: {result['message']}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    if result["status"] == "failed":
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
