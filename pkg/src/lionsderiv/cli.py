"""Command-line front end: estimate, verify, study.

Configuration comes from an optional JSON file (``--config``) with
individual flags taking precedence, so a run is reproducible from a single
recorded artifact while staying overridable interactively.  Identical
config + input + seed produce bitwise-identical output files.

Exit codes: 0 success, 1 malformed input, 2 invalid configuration,
3 refinement did not converge, 4 a verification check failed.  Outputs are
still written on 3 and 4 -- diagnosing a failure requires the data.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .estimator import (
    MODES,
    SchedulePolicy,
    lions_derivative_grid,
    refine_until_converged,
)
from .functionals import (
    Functional,
    FunctionalConfigError,
    NoClosedFormError,
    functional_from_config,
)
from .measure import (
    MeasureError,
    SampleFormatError,
    dyadic_quantize,
    law_of,
    read_sample_file,
)
from .verify import (
    check_against_oracle,
    check_law_invariance,
    check_mass_linearity,
    check_structure,
    convergence_study,
)

__all__ = ["main", "console_main", "RunConfig", "ConfigError"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_VERIFICATION = 4

DEFAULT_TOL = 1e-6
DEFAULT_ESTIMATE_LEVELS = (2, 24)
DEFAULT_STUDY_LEVELS = (2, 8)
DEFAULT_VERIFY_LEVEL = 4
DEFAULT_DIRECTIONS = 32
DEFAULT_TRANSFORMS = 20

_CONFIG_KEYS = {
    "command", "functional", "input", "out", "level", "levels",
    "tol", "eps0", "ratio", "count", "mode", "seed",
}


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    functional_spec: Mapping[str, Any]
    input_path: str
    output_path: str | None
    level: int | None
    levels: tuple[int, int] | None
    tol: float
    seed: int
    policy: SchedulePolicy

    def functional(self) -> Functional:
        return functional_from_config(self.functional_spec)


def _fmt(x: float) -> str:
    # repr gives the shortest decimal that parses back to the same float.
    return repr(float(x))


def _parse_levels(raw: Any) -> tuple[int, int]:
    if isinstance(raw, str):
        parts = raw.split("..")
        if len(parts) != 2:
            raise ConfigError(f"levels must look like `a..b`, got {raw!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"levels must be integers, got {raw!r}") from None
    elif isinstance(raw, (list, tuple)) and len(raw) == 2:
        a, b = raw
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (a, b)):
            raise ConfigError(f"levels must be integers, got {raw!r}")
    else:
        raise ConfigError(f"levels must be `a..b` or [a, b], got {raw!r}")
    if a < 0 or b < a:
        raise ConfigError(f"levels must satisfy 0 <= a <= b, got {a}..{b}")
    return int(a), int(b)


def _require_number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{key} must be finite, got {value!r}")
    return v


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge config file and flags (flags win) into a validated RunConfig."""
    file_cfg: dict[str, Any] = {}
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(file_cfg) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "command" in file_cfg and file_cfg["command"] != args.command:
            raise ConfigError(
                f"config file says command {file_cfg['command']!r} but "
                f"{args.command!r} was invoked"
            )

    def pick(flag_value, key):
        return flag_value if flag_value is not None else file_cfg.get(key)

    functional_spec = pick(None, "functional")
    if args.functional is not None:
        try:
            functional_spec = json.loads(args.functional)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--functional is not valid JSON: {exc}")
    if functional_spec is None:
        raise ConfigError("a functional spec is required (--functional or config)")
    try:
        functional_from_config(functional_spec)
    except FunctionalConfigError as exc:
        raise ConfigError(str(exc))

    input_path = pick(args.input, "input")
    if input_path is None:
        raise ConfigError("an input sample file is required (--input or config)")

    output_path = pick(args.out, "out")

    level = pick(args.level, "level")
    if level is not None:
        if isinstance(level, bool) or not isinstance(level, int):
            raise ConfigError(f"level must be an integer, got {level!r}")
        if level < 0:
            raise ConfigError(f"level must be nonnegative, got {level}")

    levels_raw = pick(args.levels, "levels")
    levels = _parse_levels(levels_raw) if levels_raw is not None else None
    if args.command == "estimate" and level is not None and levels is not None:
        raise ConfigError("estimate takes either `level` or `levels`, not both")

    tol_raw = pick(args.tol, "tol")
    tol = DEFAULT_TOL if tol_raw is None else _require_number(tol_raw, "tol")
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol!r}")

    seed_raw = pick(args.seed, "seed")
    seed = 0 if seed_raw is None else seed_raw
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if not (0 <= seed < 2 ** 64):
        raise ConfigError(f"seed must fit in an unsigned 64-bit word, got {seed}")

    eps0 = pick(args.eps0, "eps0")
    if eps0 is not None:
        eps0 = _require_number(eps0, "eps0")
        if eps0 <= 0:
            raise ConfigError(f"eps0 must be positive, got {eps0!r}")
    ratio = file_cfg.get("ratio")
    if ratio is not None:
        ratio = _require_number(ratio, "ratio")
        if not (0.0 < ratio < 1.0):
            raise ConfigError(f"ratio must lie in (0, 1), got {ratio!r}")
    count = file_cfg.get("count")
    if count is not None:
        if isinstance(count, bool) or not isinstance(count, int) or count < 2:
            raise ConfigError(f"count must be an integer >= 2, got {count!r}")
    mode = pick(args.mode, "mode")
    if mode is not None and mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")

    return RunConfig(
        command=args.command,
        functional_spec=functional_spec,
        input_path=str(input_path),
        output_path=None if output_path is None else str(output_path),
        level=level,
        levels=levels,
        tol=tol,
        seed=seed,
        policy=SchedulePolicy(eps0=eps0, ratio=ratio, count=count, mode=mode),
    )


def _report_path(csv_path: str) -> str:
    return (csv_path[:-4] if csv_path.endswith(".csv") else csv_path) + ".report.json"


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_estimate(cfg: RunConfig) -> int:
    f = cfg.functional()
    sample = read_sample_file(cfg.input_path)
    if cfg.level is not None:
        n_min = n_max = cfg.level
    else:
        n_min, n_max = cfg.levels if cfg.levels is not None else DEFAULT_ESTIMATE_LEVELS
    est, report = refine_until_converged(
        f, sample, tol=cfg.tol, n_min=n_min, n_max=n_max, schedule_policy=cfg.policy,
    )
    out_csv = cfg.output_path or "estimate.csv"
    with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,g_hat,err_est\n")
        for x, g, e in zip(est.grid_atoms, est.g_values, est.error_estimates):
            fh.write(f"{_fmt(x)},{_fmt(g)},{_fmt(e)}\n")
    payload = {
        "command": "estimate",
        "functional": dict(cfg.functional_spec),
        "input": cfg.input_path,
        "seed": cfg.seed,
        "tol": cfg.tol,
        "schedule_policy": cfg.policy.to_dict(),
        "levels": list(report.levels),
        "distances": list(report.distances),
        "converged": report.converged,
        "final_level": est.level.n,
        "n_atoms": est.n_atoms,
        "failed_atoms": list(est.failed_atoms),
        "grid_csv": out_csv,
    }
    _write_json(_report_path(out_csv), payload)
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_verify(cfg: RunConfig) -> int:
    f = cfg.functional()
    sample = read_sample_file(cfg.input_path)
    level = cfg.level if cfg.level is not None else DEFAULT_VERIFY_LEVEL
    schedule = cfg.policy.for_level(level)
    est = lions_derivative_grid(f, sample, level, schedule)

    checks: list[dict] = []
    all_passed = True

    structure = check_structure(
        f, sample, est, directions=DEFAULT_DIRECTIONS, seed=cfg.seed,
        schedule=schedule,
    )
    checks.append(structure.to_dict())
    all_passed &= structure.status == "pass"

    invariance = check_law_invariance(
        f, sample, level, schedule=schedule, transforms=DEFAULT_TRANSFORMS,
        seed=(cfg.seed + 1) % 2 ** 64,
    )
    checks.append(invariance.to_dict())
    all_passed &= invariance.status == "pass"

    mu_n = law_of(dyadic_quantize(sample, level))
    heaviest = int(np.argmax(mu_n.weights))
    linearity = check_mass_linearity(f, mu_n, heaviest, schedule=schedule)
    checks.append(linearity.to_dict())
    all_passed &= linearity.status == "pass"

    try:
        oracle = check_against_oracle(f, sample, level, schedule=schedule)
        checks.append(oracle.to_dict())
        all_passed &= oracle.status == "pass"
    except NoClosedFormError as exc:
        checks.append({"name": "oracle_comparison", "status": "skipped",
                       "reason": str(exc)})

    payload = {
        "command": "verify",
        "functional": dict(cfg.functional_spec),
        "input": cfg.input_path,
        "level": level,
        "seed": cfg.seed,
        "schedule_policy": cfg.policy.to_dict(),
        "all_passed": bool(all_passed),
        "checks": checks,
    }
    _write_json(cfg.output_path or "verify_report.json", payload)
    return EXIT_OK if all_passed else EXIT_VERIFICATION


def cmd_study(cfg: RunConfig) -> int:
    f = cfg.functional()
    sample = read_sample_file(cfg.input_path)
    a, b = cfg.levels if cfg.levels is not None else DEFAULT_STUDY_LEVELS
    rows = convergence_study(f, sample, range(a, b + 1), schedule_policy=cfg.policy)
    out_csv = cfg.output_path or "study.csv"
    with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,w2_quant,succ_diff,oracle_err\n")
        for row in rows:
            succ = "" if row.successive_difference is None else _fmt(row.successive_difference)
            oerr = "" if row.oracle_error is None else _fmt(row.oracle_error)
            fh.write(f"{row.level},{_fmt(row.w2_quantization)},{succ},{oerr}\n")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lionsderiv",
        description="Derivatives of measure functionals by dyadic quantization "
                    "and Dirac-shift finite differences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("estimate", "refine the derivative grid until converged; write CSV + JSON"),
        ("verify", "run the property checks for a functional; write JSON report"),
        ("study", "tabulate per-level convergence metrics; write CSV"),
    ]
    for name, help_text in specs:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--input", help="sample CSV (`value` or `value,weight` lines)")
        sp.add_argument("--functional", help='functional spec JSON, e.g. {"name":"variance"}')
        sp.add_argument("--level", type=int, help="single quantization level")
        sp.add_argument("--levels", help="level range `a..b`")
        sp.add_argument("--tol", type=float, help="convergence tolerance (estimate)")
        sp.add_argument("--eps0", type=float, help="initial perturbation step override")
        sp.add_argument("--mode", choices=list(MODES), help="difference mode")
        sp.add_argument("--seed", type=int, help="seed for verification randomness")
        sp.add_argument("--out", help="output path (CSV or JSON per command)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"lionsderiv: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.command == "estimate":
            return cmd_estimate(cfg)
        if cfg.command == "verify":
            return cmd_verify(cfg)
        return cmd_study(cfg)
    except (SampleFormatError, MeasureError) as exc:
        print(f"lionsderiv: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
