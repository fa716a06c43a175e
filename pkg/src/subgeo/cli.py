"""Command-line runner: ``subgeo {rates,drift,couple,bound,experiment}``.

Exit codes: 0 success, 1 a pipeline assertion failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from . import __version__
from ._io import write_json
from ._streams import Streams, resolve_threads
from .experiments import PIPELINES, Context, PipelineFailure

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

RATE_SCHEMA = {
    "type": "object",
    "properties": {
        "family": {"enum": ["Logarithmic", "Polynomial", "Subexponential", "PcnDrift", "Extended"]},
        "kappa": _pos,
        "scale": _pos,
        "c": _pos,
        "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "M": _pos,
        "base": {"$ref": "#/$defs/rate"},
    },
    "required": ["family"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"family": {"const": "Polynomial"}}},
         "then": {"properties": {"kappa": {"exclusiveMaximum": 1}}, "required": ["kappa"]}},
        {"if": {"properties": {"family": {"enum": ["Logarithmic", "Subexponential"]}}},
         "then": {"required": ["kappa"]}},
        {"if": {"properties": {"family": {"const": "PcnDrift"}}},
         "then": {"properties": {"c": {"exclusiveMaximum": 1}}, "required": ["c", "kappa", "beta"]}},
        {"if": {"properties": {"family": {"const": "Extended"}}},
         "then": {"required": ["base", "M"]}},
    ],
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"rate": RATE_SCHEMA},
    "type": "object",
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": sorted(PIPELINES)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {"type": "string"},
        "rate": {
            "type": "object",
            "properties": {
                "phi": {"$ref": "#/$defs/rate"},
                "grid_horizon": {"type": "number", "minimum": 1000},
                "quad_tol": _pos,
                "inv_tol": _pos,
                "ell": {"type": "integer", "minimum": 1},
                "t_grid": {"type": "array", "items": {"type": "number", "minimum": 1}},
                "kappa_list": {"type": "array", "items": _pos},
            },
            "additionalProperties": False,
        },
        "chain": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["srwm", "ar", "pcn"]},
                "h": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                "K": {"type": "integer", "minimum": 1},
                "s_exponent": _pos,
                "p": {"type": "integer", "minimum": 1},
                "rho_ar": {"type": "number", "minimum": 0, "exclusiveMaximum": 2},
                "noise": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["gaussian", "truncated_exp"]},
                        "sigma": _pos,
                        "beta0": _pos,
                        "kappa0": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "radius_max": _pos,
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                "beta": _pos,
                "rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eigs": {"type": "array", "items": _pos},
                "eig_decay": _pos,
                "Cg": _pos,
                "theta": _pos,
            },
            "additionalProperties": False,
        },
        "drift": {
            "type": "object",
            "properties": {
                "n_points": {"type": "integer", "minimum": 2},
                "n_reps": {"type": "integer", "minimum": 100},
                "confidence": {"type": "number", "exclusiveMinimum": 0.5, "exclusiveMaximum": 1},
                "calib_confidence": {"type": "number", "exclusiveMinimum": 0.5, "exclusiveMaximum": 1},
                "c_double": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "coupling": {
            "type": "object",
            "properties": {
                "delta": {
                    "type": "object",
                    "properties": {"kind": {"enum": ["product_ball"]}, "M": _pos},
                    "required": ["kind", "M"],
                    "additionalProperties": False,
                },
                "ell": {"type": "integer", "minimum": 1},
                "ell_max": {"type": "integer", "minimum": 1},
                "eta": _pos,
                "level": _pos,
                "replicates": {"type": "integer", "minimum": 10},
                "n_steps": {"type": "integer", "minimum": 1},
                "n_pairs": {"type": "integer", "minimum": 10},
                "pair0": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "x0": _num,
                "ball_radius": _pos,
                "global_radius": _pos,
                "start_radius": _pos,
            },
            "additionalProperties": False,
        },
        "bound": {
            "type": "object",
            "properties": {
                "delta_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                          "exclusiveMaximum": 1}, "minItems": 1},
                "n_min": {"type": "number", "minimum": 1},
                "n_max": {"type": "number", "minimum": 1},
                "grid_horizon": {"type": "number", "minimum": 1000},
                "sequence_n_max": {"type": "integer", "minimum": 0},
                "families": {"type": "array", "items": {"$ref": "#/$defs/rate"}},
                "inputs": {
                    "type": "object",
                    "properties": {
                        "ell": {"type": "integer", "minimum": 1},
                        "epsilon": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "b_double": {"type": "number", "minimum": 0},
                        "sup_delta_V": _pos,
                        "M_phi": _pos,
                        "M_V": _pos,
                        "V_of_x": {"type": "number", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "required": ["version"],
    "additionalProperties": False,
}

SUBCOMMAND_EXPERIMENT = {
    "rates": "RateTables",
    "bound": "Table1Check",
    "drift": None,
    "couple": None,
}


class ConfigError(ValueError):
    pass


def validate_config(config: dict) -> dict:
    """Validate against the versioned schema; the message names the offending field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(config))
    if err is not None:
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config field '{where}': {err.message}")
    return config


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {"version": SCHEMA_VERSION}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _experiment_for(command: str, config: dict) -> str:
    if command == "experiment":
        if "experiment" not in config:
            raise ConfigError("config field 'experiment' is required for the experiment subcommand")
        return config["experiment"]
    fixed = SUBCOMMAND_EXPERIMENT[command]
    if fixed is not None:
        return fixed
    kind = config.get("chain", {}).get("kind", "srwm")
    return {"srwm": "SrwmFull" if command == "drift" else "TailCheck",
            "ar": "ArFull", "pcn": "PcnFull"}[kind]


def run(config: dict, command: str = "experiment", seed: Optional[int] = None,
        out: Optional[str] = None, threads: Optional[int] = None) -> int:
    """Run one pipeline; returns the process exit code."""
    try:
        validate_config(config)
        name = _experiment_for(command, config)
        seed = seed if seed is not None else config.get("seed", 0)
        prefix = out or config.get("output") or f"subgeo_{name}"
        n_threads = resolve_threads(threads)
    except (ConfigError, ValueError) as exc:
        print(json.dumps({"error": {"module": "cli", "kind": "config", "message": str(exc)}}),
              file=sys.stderr)
        return 2
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    ctx = Context(config, Path(prefix), Streams(int(seed), (), n_threads))
    summary = {"config": config, "experiment": name, "seed": seed,
               "metadata": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                            "threads": n_threads, "version": __version__}}
    code = 0
    try:
        summary["results"] = PIPELINES[name](ctx)
    except PipelineFailure as exc:
        summary["error"] = {"module": exc.module, "assertion": exc.assertion, "detail": exc.detail}
        code = 1
    except ValueError as exc:
        summary["error"] = {"module": name, "kind": "config", "message": str(exc)}
        code = 2
    summary["checks"] = ctx.checks
    failed = [k for k, v in ctx.checks.items() if not v["passed"]]
    if failed and code == 0:
        first = ctx.checks[failed[0]]
        summary["error"] = {"module": first["module"], "assertion": failed[0], "failed_checks": failed}
        code = 1
    summary["files"] = ctx.files
    write_json(Path(f"{prefix}_summary.json"), summary)
    if code:
        print(json.dumps({"error": summary["error"]}), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subgeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "rates": "tabulate H, Hinv, r, R and the rate constants",
        "drift": "calibrate and certify drift conditions for the configured chain",
        "couple": "verify coupling sets and simulate coupled distances",
        "bound": "rate-order regressions of the convergence bounds",
        "experiment": "run the pipeline named in the config",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output path prefix")
        p.add_argument("--threads", type=int, help="worker threads (default: SUBGEO_THREADS or 1)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(json.dumps({"error": {"module": "cli", "kind": "config", "message": str(exc)}}),
              file=sys.stderr)
        return 2
    return run(config, args.command, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
