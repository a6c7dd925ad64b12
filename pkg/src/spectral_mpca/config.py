"""JSON run configuration: schema, validation, and dataclass builders.

One JSON document drives the command-line tool.  It may contain up to
three sections — ``fit``, ``simulate``, ``benchmark`` — whose keys
mirror :class:`~spectral_mpca.pipeline.FitConfig`,
:class:`~spectral_mpca.simgen.SimConfig`, and
:class:`~spectral_mpca.benchmark.BenchmarkConfig`.  Validation is
strict: unknown keys are rejected anywhere in the document.  The
machine-readable schema ships with the package as
``config.schema.json`` (kept in sync with :data:`CONFIG_SCHEMA` by a
test) and can be regenerated with ``python -m spectral_mpca.config``.
"""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

from .benchmark import KNOWN_METHODS, BenchmarkConfig, Scenario
from .pipeline import FitConfig
from .simgen import SimConfig

__all__ = [
    "ConfigError",
    "CONFIG_SCHEMA",
    "load_config",
    "validate_config",
    "fit_config_from",
    "sim_config_from",
    "benchmark_config_from",
    "packaged_schema_text",
    "schema_text",
]


class ConfigError(ValueError):
    """Invalid run configuration."""


def _nullable(base: dict) -> dict:
    return {"anyOf": [base, {"type": "null"}]}


_POSITIVE_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POSITIVE_NUM = {"type": "number", "exclusiveMinimum": 0}

_FIT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_time_points": {"type": "integer", "minimum": 3},
        "n_frequencies": {"type": "integer", "minimum": 2},
        "bandwidth_mean": _nullable(_POSITIVE_NUM),
        "bandwidth_cov": _nullable(_POSITIVE_NUM),
        "lag_window": _nullable(_POSITIVE_INT),
        "n_components": _nullable(_POSITIVE_INT),
        "max_components": _POSITIVE_INT,
        "max_abs_lag": _NONNEG_INT,
        "lag_epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "phase_tol": _POSITIVE_NUM,
        "phase_max_iter": _POSITIVE_INT,
        "cg_rtol": _POSITIVE_NUM,
        "cg_max_iter_factor": _POSITIVE_INT,
        "var_max_order": _POSITIVE_INT,
    },
}

_SIM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_subjects": _POSITIVE_INT,
        "n_curves": {"type": "integer", "minimum": 2},
        "n_components": _POSITIVE_INT,
        "max_lags": {"type": "array", "items": _NONNEG_INT, "minItems": 1},
        "rho": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "case": {"enum": [1, 2, 3]},
        "n_range": {
            "type": "array",
            "items": _POSITIVE_INT,
            "minItems": 2,
            "maxItems": 2,
        },
        "n_sites": {"type": "integer", "minimum": 2},
        "edge_rate": {"type": "number", "minimum": 0},
        "edge_bounds": {
            "type": "array",
            "items": _POSITIVE_NUM,
            "minItems": 2,
            "maxItems": 2,
        },
        "t_dof": {"type": "integer", "minimum": 3},
        "noise_fraction": {"type": "number", "minimum": 0},
        "burn_in": _NONNEG_INT,
        "calibration_draws": _POSITIVE_INT,
        "seed": _NONNEG_INT,
    },
}

_SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "case": {"enum": [1, 2, 3]},
        "n_curves": {"type": "integer", "minimum": 2},
        "n_range": {
            "type": "array",
            "items": _POSITIVE_INT,
            "minItems": 2,
            "maxItems": 2,
        },
    },
}

_BENCHMARK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenarios": {"type": "array", "items": _SCENARIO_SCHEMA, "minItems": 1},
        "methods": {
            "type": "array",
            "items": {"enum": list(KNOWN_METHODS)},
            "minItems": 1,
        },
        "metric": {"enum": ["nmse", "nmspe"]},
        "n_replicates": _POSITIVE_INT,
        "base_seed": _NONNEG_INT,
        "horizon": _POSITIVE_INT,
        "refit": {"enum": ["full", "scores_only"]},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "spectral-mpca run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fit": _FIT_SCHEMA,
        "simulate": _SIM_SCHEMA,
        "benchmark": _BENCHMARK_SCHEMA,
    },
}


def validate_config(document: dict) -> dict:
    """Validate a parsed configuration document; returns it unchanged."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "(top level)"
        raise ConfigError(f"config field {where}: {err.message}")
    return document


def load_config(path) -> dict:
    """Read and validate a JSON configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return validate_config(document)


def fit_config_from(document: dict, **overrides) -> FitConfig:
    """Build fit settings from the ``fit`` section plus keyword overrides."""
    kwargs = dict(document.get("fit", {}))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return FitConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fit settings: {exc}") from exc


def sim_config_from(document: dict, **overrides) -> SimConfig:
    """Build generator settings from the ``simulate`` section."""
    kwargs = dict(document.get("simulate", {}))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("max_lags", "rho", "n_range", "edge_bounds"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulate settings: {exc}") from exc


def benchmark_config_from(document: dict, **overrides) -> BenchmarkConfig:
    """Build benchmark settings; the document's ``fit`` section is used
    for the per-replicate fits unless a ``fit`` override is supplied."""
    kwargs = dict(document.get("benchmark", {}))
    if "scenarios" in kwargs:
        kwargs["scenarios"] = tuple(
            Scenario(
                case=s.get("case", 1),
                n_curves=s.get("n_curves", 60),
                n_range=tuple(s.get("n_range", (5, 10))),
            )
            for s in kwargs["scenarios"]
        )
    if "methods" in kwargs:
        kwargs["methods"] = tuple(kwargs["methods"])
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    kwargs.setdefault("fit", fit_config_from(document))
    try:
        return BenchmarkConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"benchmark settings: {exc}") from exc


def schema_text() -> str:
    """The schema serialized exactly as shipped in the package."""
    return json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True) + "\n"


def packaged_schema_text() -> str:
    """Contents of the installed ``config.schema.json`` resource."""
    return (
        resources.files("spectral_mpca").joinpath("config.schema.json").read_text("utf-8")
    )


def main() -> None:
    """Regenerate ``config.schema.json`` next to this module."""
    target = resources.files("spectral_mpca").joinpath("config.schema.json")
    with open(str(target), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(schema_text())
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
