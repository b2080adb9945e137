"""Config-driven command line front end.

Usage::

    copulamix <command> --config cfg.json [--out DIR] [--threads N] [--verbose]

Commands: ``measures``, ``scan``, ``certify``, ``noisy``, ``simulate``.
Every run writes its tables to ``--out`` together with
``run_manifest.json`` (config hash, library version, outputs, exit code).

Exit codes: 0 success, 1 negative scientific result, 2 usage or config
error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .algebra import perturb_m_n_fold, perturb_pi_n_fold
from .core import CopulaExpr, TrivariateGrid, expr_from_dict
from .errors import CopulaError, NumericError, ParameterDomainError, UnsupportedMeasureError
from .measures import ALL_MEASURES, measure, measures_csv, perturbed_measure
from .mixing import Absence, alpha_certificate, mixing_scan, rho_certificate
from .noise import NoiseSpec, dist_from_dict, grid_cdf_distance, monte_carlo_noisy, noisy_copula
from .simulation import empirical_mixing, sample_chain

log = logging.getLogger("copulamix")

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MC_TOLERANCE = 0.02

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_unit = {"type": "number", "minimum": 0, "maximum": 1}
_pos_int = {"type": "integer", "minimum": 1}

_COPULA = {
    "oneOf": [
        {"enum": ["Pi", "M", "W"]},
        {"type": "object", "additionalProperties": False, "required": ["type"],
         "properties": {"type": {"enum": ["Pi", "M", "W"]}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "a", "b"],
         "properties": {"type": {"const": "Mardia"}, "a": _unit, "b": _unit}},
        {"type": "object", "additionalProperties": False, "required": ["type", "m", "mass"],
         "properties": {"type": {"const": "grid"}, "m": _pos_int,
                        "mass": {"type": "array", "items": {"type": "number"}}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "weights", "components"],
         "properties": {"type": {"const": "convex"},
                        "weights": {"type": "array", "items": _unit, "minItems": 1},
                        "components": {"type": "array", "items": {"$ref": "#/$defs/copula"}, "minItems": 1}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "base", "theta"],
         "properties": {"type": {"enum": ["perturb_pi", "perturb_m"]},
                        "base": {"$ref": "#/$defs/copula"}, "theta": _unit}},
        {"type": "object", "additionalProperties": False, "required": ["type", "base", "n"],
         "properties": {"type": {"const": "nfold"}, "base": {"$ref": "#/$defs/copula"}, "n": _pos_int}},
    ],
}

_TRIVARIATE = {"type": "object", "additionalProperties": False, "required": ["type", "m", "mass"],
               "properties": {"type": {"const": "trivariate_grid"}, "m": _pos_int,
                              "mass": {"type": "array", "items": {"type": "number"}}}}

_DIST = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["type"],
         "properties": {"type": {"const": "uniform"}, "lo": {"type": "number"}, "hi": {"type": "number"}}},
        {"type": "object", "additionalProperties": False, "required": ["type"],
         "properties": {"type": {"const": "normal"}, "mean": {"type": "number"},
                        "sd": {"type": "number", "exclusiveMinimum": 0}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "c"],
         "properties": {"type": {"const": "point_mass"}, "c": {"type": "number"}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "values"],
         "properties": {"type": {"const": "empirical"},
                        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1}}},
    ],
}


def _one_or_many(item: dict) -> dict:
    return {"oneOf": [item, {"type": "array", "items": item, "minItems": 1}]}


def _schema(command: str, properties: dict, required: list[str]) -> dict:
    props = {"command": {"const": command}, "copula": {"$ref": "#/$defs/copula"}, **properties}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "additionalProperties": False,
        "required": required,
        "properties": props,
        "$defs": {"copula": _COPULA, "dist": _DIST},
    }


SCHEMAS = {
    "measures": _schema("measures", {
        "family": {"enum": ["Pi", "M"]},
        "theta": _one_or_many(_unit),
        "n": _one_or_many(_pos_int),
        "measure": _one_or_many({"enum": list(ALL_MEASURES)}),
        "output": {"type": "string"},
    }, ["copula", "measure"]),
    "scan": _schema("scan", {
        "theta": _unit,
        "family": {"enum": ["Pi", "M"]},
        "n_max": {"type": "integer", "minimum": 2},
        "m": _pos_int,
        "output": {"type": "string"},
    }, ["copula", "theta", "family", "n_max"]),
    "certify": _schema("certify", {
        "components": {"type": "array", "items": {"$ref": "#/$defs/copula"}, "minItems": 1},
        "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "minItems": 1},
        "s_max": _pos_int,
        "m": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "kind": {"enum": ["alpha", "rho", "both"]},
        "output": {"type": "string"},
    }, ["components", "weights"]),
    "noisy": _schema("noisy", {
        "copula": {"oneOf": [{"$ref": "#/$defs/copula"}, _TRIVARIATE]},
        "marginals": {"type": "array", "items": {"$ref": "#/$defs/dist"}, "minItems": 2, "maxItems": 3},
        "noise": {"type": "object", "additionalProperties": False, "required": ["mode", "s"],
                  "properties": {"mode": {"enum": ["independent", "common"]},
                                 "dists": {"type": "array", "items": {"$ref": "#/$defs/dist"}},
                                 "s": {"type": "integer", "minimum": 0, "maximum": 3},
                                 "perm": {"type": "array", "items": {"type": "integer", "minimum": 0}}}},
        "m": _pos_int,
        "mc_check": {"type": "object", "additionalProperties": False, "required": ["n", "seed"],
                     "properties": {"n": _pos_int, "seed": {"type": "integer", "minimum": 0}}},
        "output": {"type": "string"},
    }, ["copula", "marginals", "noise", "m"]),
    "simulate": _schema("simulate", {
        "n_steps": _pos_int,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "method": {"enum": ["auto", "mixture", "inversion"]},
        "lags": {"type": "array", "items": _pos_int, "minItems": 1},
        "m": _pos_int,
        "write_path": {"type": "boolean"},
        "output": {"type": "string"},
    }, ["copula", "n_steps", "seed"]),
}


class ConfigError(Exception):
    """The configuration file is unreadable or violates its schema."""


def load_config(path: Path, command: str) -> tuple[dict, str]:
    """Read and validate a config, returning it with the SHA-256 of its bytes."""
    try:
        raw = Path(path).read_bytes()
        config = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(config, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    return config, hashlib.sha256(raw).hexdigest()


def _as_list(value) -> list:
    return value if isinstance(value, list) else [value]


def _write(out: Path, name: str, text: str, outputs: list[str]) -> None:
    target = out / name
    with open(target, "w", newline="\n") as fh:
        fh.write(text)
    outputs.append(name)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _direct(C: CopulaExpr, family: str, theta: float, n: int, which: str) -> float:
    power = perturb_pi_n_fold if family == "Pi" else perturb_m_n_fold
    return measure(power(C, theta, n), which)


def cmd_measures(config: dict, out: Path, outputs: list[str]) -> int:
    C = expr_from_dict(config["copula"])
    rows = []
    family = config.get("family")
    for which in _as_list(config["measure"]):
        if family is None:
            rows.append(dict(measure=which, family="", theta="", n="",
                             value=repr(float(measure(C, which))), method="direct"))
            continue
        for theta in _as_list(config.get("theta", 0.0)):
            for n in _as_list(config.get("n", 1)):
                base = dict(measure=which, family=family, theta=repr(float(theta)), n=n)
                try:
                    closed = perturbed_measure(C, theta, n, which, family)
                    rows.append({**base, "value": repr(float(closed)), "method": "closed_form"})
                except UnsupportedMeasureError as exc:
                    log.info("%s", exc)
                rows.append({**base, "value": repr(float(_direct(C, family, theta, n, which))),
                             "method": "direct_expansion"})
    _write(out, config.get("output", "measures.csv"), measures_csv(rows), outputs)
    return EXIT_OK


def cmd_scan(config: dict, out: Path, outputs: list[str]) -> int:
    C = expr_from_dict(config["copula"])
    report = mixing_scan(C, config["theta"], config["family"], config["n_max"], config.get("m", 16))
    name = config.get("output", "scan.csv")
    _write(out, name, report.to_csv(), outputs)
    _write(out, Path(name).stem + "_summary.json", json.dumps(report.summary(), indent=2) + "\n", outputs)
    return EXIT_OK


def cmd_certify(config: dict, out: Path, outputs: list[str]) -> int:
    comps = [expr_from_dict(c) for c in config["components"]]
    weights = config["weights"]
    s_max, m = config.get("s_max", 3), config.get("m", 16)
    kind = config.get("kind", "both")
    results = []
    if kind in ("alpha", "both"):
        results.append(alpha_certificate(comps, weights, s_max, m))
    if kind in ("rho", "both"):
        results.append(rho_certificate(comps, weights, s_max, m))
    body = [json.loads(r.to_json()) for r in results]
    _write(out, config.get("output", "certificate.json"), json.dumps(body, indent=2) + "\n", outputs)
    return EXIT_NEGATIVE if any(isinstance(r, Absence) for r in results) else EXIT_OK


def cmd_noisy(config: dict, out: Path, outputs: list[str]) -> int:
    spec = config["copula"]
    if isinstance(spec, dict) and spec.get("type") == "trivariate_grid":
        C = TrivariateGrid(np.asarray(spec["mass"], dtype=float).reshape((spec["m"],) * 3))
    else:
        C = expr_from_dict(spec)
    marginals = [dist_from_dict(d) for d in config["marginals"]]
    noise = config["noise"]
    perm = noise.get("perm")
    ns = NoiseSpec(noise["mode"], tuple(dist_from_dict(d) for d in noise.get("dists", [])), noise["s"],
                   None if perm is None else tuple(perm))
    m = config["m"]
    result = noisy_copula(C, marginals, ns, m, details=True)
    name = config.get("output", "noisy_grid.json")
    _write(out, name, result.grid.to_json() + "\n", outputs)
    meta = {"nodes": result.nodes, "quadrature_change": result.quadrature_change,
            "converged": result.converged, "margin_drift_before_rescaling": result.margin_drift,
            "tail_mass_truncated": result.tail_mass}
    _write(out, Path(name).stem + "_meta.json", json.dumps(meta, indent=2) + "\n", outputs)
    code = EXIT_OK
    if "mc_check" in config:
        mc = config["mc_check"]
        emp = monte_carlo_noisy(C, marginals, ns, m, mc["n"], mc["seed"])
        dev = grid_cdf_distance(emp, result.grid)
        passed = dev <= MC_TOLERANCE
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "seed", "max_cdf_deviation", "tolerance", "passed"])
        writer.writerow([mc["n"], mc["seed"], repr(dev), MC_TOLERANCE, str(passed).lower()])
        _write(out, "mc_check.csv", buf.getvalue(), outputs)
        if not passed:
            code = EXIT_NEGATIVE
    return code


def cmd_simulate(config: dict, out: Path, outputs: list[str]) -> int:
    C = expr_from_dict(config["copula"])
    path = sample_chain(C, config["n_steps"], config["seed"], config.get("method", "auto"))
    if config.get("write_path", True):
        _write(out, "path.csv", path.to_csv(), outputs)
    if "lags" in config:
        report = empirical_mixing(path, config["lags"], config.get("m", 8))
        _write(out, config.get("output", "mixing.csv"), report.to_csv(), outputs)
        _write(out, "mixing_summary.json", json.dumps(report.summary(), indent=2) + "\n", outputs)
    return EXIT_OK


COMMANDS = {"measures": cmd_measures, "scan": cmd_scan, "certify": cmd_certify,
            "noisy": cmd_noisy, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copulamix", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (recorded in the manifest; runs are single-threaded)")
        p.add_argument("--verbose", action="store_true")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        config, digest = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    error = None
    try:
        code = COMMANDS[args.command](config, out, outputs)
    except NumericError as exc:
        code, error = EXIT_NUMERIC, str(exc)
    except (ParameterDomainError, CopulaError) as exc:
        code, error = EXIT_USAGE, str(exc)
    if error:
        print(f"error: {error}", file=sys.stderr)
    manifest = {
        "command": args.command,
        "config_path": str(args.config),
        "config_sha256": digest,
        "version": __version__,
        "threads": args.threads,
        "outputs": outputs,
        "exit_code": code,
    }
    if error:
        manifest["error"] = error
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
