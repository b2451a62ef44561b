"""Scenario files: flat sectioned key=value text (INI) with a JSON mirror.

A scenario fully determines one closed-loop run: supplier fit, demand
side, baseline, controller, attack, and simulation settings. Unknown
sections or keys are rejected so that typos fail loudly. Bundled presets
reproduce the package's standard example scenarios.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .attacks import AttackGroup, AttackSpec
from .controller import ControllerConfig
from .errors import ScenarioError
from .models import (
    CeoDemand,
    ConsumerPopulation,
    LinearSupply,
    calibrate_demand_scale,
    population_from_csv,
    sample_population,
)
from .sim import SimConfig, load_baseline_trace

_SCHEMA: dict[str, set[str] | None] = {
    "supplier": {"p", "q"},
    "population": {
        "kind", "D", "epsilon", "calibrate_lambda_star", "count", "scale_mean",
        "scale_std", "scale_min", "epsilon_mean", "epsilon_std", "path",
    },
    "baseline": {"kind", "b", "path", "per_house_scale", "house_count"},
    "controller": {"mode", "eta", "lambda_o", "lambda_min", "lambda_max", "w_slope_error"},
    "attack": {"kind", "rho", "gamma", "tau", "start", "groups"},
    "simulation": {"T", "horizon", "lambda0", "seed", "feeder_rating", "lambda_star", "units"},
    "output": {"directory"},
    "sweep": None,  # free-form: swept key -> value list
}
_REQUIRED = ("supplier", "population", "baseline", "controller", "simulation")

#: offset mixed into the scenario seed for the population draw so that the
#: sampled consumers do not reuse the run's compromised-set stream
_POPULATION_SEED_OFFSET = 1_000_003


@dataclass
class Scenario:
    """Validated scenario: a SimConfig plus output/rating directives."""

    config: SimConfig
    out_dir: str | None
    feeder_rating_mode: str  # "none" | "auto" | "fixed"
    sweep_grid: dict[str, list[str]]
    raw: dict


def _validate_keys(data: dict) -> None:
    for section, keys in data.items():
        if section not in _SCHEMA:
            raise ScenarioError(f"unknown scenario section [{section}]")
        allowed = _SCHEMA[section]
        if allowed is None:
            continue
        for key in keys:
            if key not in allowed:
                raise ScenarioError(f"unknown key {key!r} in section [{section}]")
    for section in _REQUIRED:
        if section not in data:
            raise ScenarioError(f"missing required section [{section}]")


def _get(data: dict, section: str, key: str, conv, default=None, required=False):
    sect = data.get(section, {})
    if key not in sect or sect[key] == "":
        if required:
            raise ScenarioError(f"missing required key {key!r} in [{section}]")
        return default
    try:
        return conv(sect[key])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"[{section}] {key} = {sect[key]!r}: {exc}") from exc


def parse_groups(text) -> tuple[AttackGroup, ...]:
    """Composite groups: 'frac:kind:key=val,key=val; frac:kind:...' or a JSON list."""
    if isinstance(text, (list, tuple)):
        return tuple(AttackGroup(**g) for g in text)
    groups = []
    for chunk in str(text).split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) < 2:
            raise ScenarioError(f"malformed attack group {chunk!r}")
        kwargs = {"fraction": float(parts[0]), "kind": parts[1].strip()}
        for item in ":".join(parts[2:]).split(","):
            item = item.strip()
            if not item:
                continue
            key, _, val = item.partition("=")
            if key not in ("gamma", "tau"):
                raise ScenarioError(f"unknown attack-group key {key!r}")
            kwargs[key] = float(val) if key == "gamma" else int(val)
        groups.append(AttackGroup(**kwargs))
    if not groups:
        raise ScenarioError("composite attack needs at least one group")
    return tuple(groups)


def _build_attack(data: dict) -> AttackSpec:
    kind = _get(data, "attack", "kind", str, default="none")
    start_raw = _get(data, "attack", "start", str, default="0")
    start = None if str(start_raw).strip().lower() == "auto" else int(float(start_raw))
    if kind == "none":
        return AttackSpec(kind="none")
    if kind == "composite":
        groups = parse_groups(data["attack"]["groups"])
        return AttackSpec(kind="composite", groups=groups, start_k=start)
    return AttackSpec(
        kind=kind,
        rho=_get(data, "attack", "rho", float, default=1.0),
        gamma=_get(data, "attack", "gamma", float, default=1.0),
        tau=_get(data, "attack", "tau", int, default=1),
        start_k=start,
    )


def _build_demand(data: dict, supplier: LinearSupply, baseline, seed: int):
    kind = _get(data, "population", "kind", str, required=True)
    if kind == "aggregate":
        eps = _get(data, "population", "epsilon", float, required=True)
        scale = _get(data, "population", "D", float)
        lam_star = _get(data, "population", "calibrate_lambda_star", float)
        if scale is None and lam_star is None:
            raise ScenarioError("aggregate population needs D or calibrate_lambda_star")
        if scale is None:
            if not np.isscalar(baseline):
                raise ScenarioError("calibration requires a constant baseline")
            return calibrate_demand_scale(supplier, float(baseline), lam_star, eps)
        return CeoDemand(scale=scale, elasticity=eps)
    if kind == "sampled":
        rng = np.random.default_rng(seed + _POPULATION_SEED_OFFSET)
        return sample_population(
            n=_get(data, "population", "count", int, required=True),
            rng=rng,
            scale_mean=_get(data, "population", "scale_mean", float, default=7.0),
            scale_std=_get(data, "population", "scale_std", float, default=3.5),
            scale_min=_get(data, "population", "scale_min", float, default=0.5),
            elasticity_mean=_get(data, "population", "epsilon_mean", float, default=-0.8),
            elasticity_std=_get(data, "population", "epsilon_std", float, default=0.1),
        )
    if kind == "csv":
        return population_from_csv(_get(data, "population", "path", str, required=True))
    raise ScenarioError(f"unknown population kind {kind!r}")


def build_scenario(data: dict, base_dir: Path | None = None) -> Scenario:
    """Validate a normalized section dict and build the run configuration."""
    _validate_keys(data)
    base = base_dir or Path.cwd()

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    supplier = LinearSupply(
        p=_get(data, "supplier", "p", float, required=True),
        q=_get(data, "supplier", "q", float, required=True),
    )
    period = _get(data, "simulation", "T", float, default=0.5)
    seed = _get(data, "simulation", "seed", int, default=0)

    bkind = _get(data, "baseline", "kind", str, required=True)
    if bkind == "constant":
        baseline = _get(data, "baseline", "b", float, required=True)
    elif bkind == "trace":
        path = resolve(_get(data, "baseline", "path", str, required=True))
        baseline = load_baseline_trace(
            path,
            per_house_scale=_get(data, "baseline", "per_house_scale", float, default=1.0),
            house_count=_get(data, "baseline", "house_count", int, default=1),
            expected_period_hours=period,
        )
    else:
        raise ScenarioError(f"unknown baseline kind {bkind!r}")

    if "path" in data.get("population", {}):
        data = {**data, "population": {**data["population"]}}
        data["population"]["path"] = str(resolve(data["population"]["path"]))
    demand = _build_demand(data, supplier, baseline, seed)

    controller = ControllerConfig(
        eta=_get(data, "controller", "eta", float, default=0.5),
        mode=_get(data, "controller", "mode", str, default="adaptive"),
        lambda_o=_get(data, "controller", "lambda_o", float),
        lambda_min=_get(data, "controller", "lambda_min", float, default=1.0),
        lambda_max=_get(data, "controller", "lambda_max", float, default=200.0),
        w_slope_error=_get(data, "controller", "w_slope_error", float, default=0.0),
    )
    attack = _build_attack(data)

    rating_raw = str(_get(data, "simulation", "feeder_rating", str, default="none")).strip()
    if rating_raw.lower() in ("none", ""):
        rating_mode, rating = "none", None
    elif rating_raw.lower() == "auto":
        rating_mode, rating = "auto", None
    else:
        rating_mode, rating = "fixed", float(rating_raw)

    config = SimConfig(
        supplier=supplier,
        demand=demand,
        controller=controller,
        attack=attack,
        baseline=baseline,
        lambda0=_get(data, "simulation", "lambda0", float, required=True),
        horizon=_get(data, "simulation", "horizon", int, required=True),
        period_hours=period,
        seed=seed,
        feeder_rating=rating,
        units=_get(data, "simulation", "units", str, default="MW"),
        lambda_star=_get(data, "simulation", "lambda_star", float),
    )
    sweep_grid = {
        k: [v.strip() for v in str(vals).split(",")]
        for k, vals in data.get("sweep", {}).items()
    }
    return Scenario(
        config=config,
        out_dir=_get(data, "output", "directory", str),
        feeder_rating_mode=rating_mode,
        sweep_grid=sweep_grid,
        raw=data,
    )


def _read_ini(path: Path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return {s: dict(parser.items(s)) for s in parser.sections()}


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise ScenarioError(f"{path}: JSON scenario must be an object of sections")
    return {s: {k: v for k, v in sect.items()} for s, sect in data.items()}


def load_scenario_dict(path) -> dict:
    """Read a scenario file (INI or JSON by extension) into a section dict."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    if path.suffix.lower() == ".json":
        return _read_json(path)
    return _read_ini(path)


def apply_overrides(data: dict, overrides: dict[str, str]) -> dict:
    """Apply 'section.key=value' overrides onto a section dict (validated later)."""
    out = {s: dict(sect) for s, sect in data.items()}
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ScenarioError(f"override {dotted!r} must look like section.key")
        out.setdefault(section, {})[key] = value
    return out


def load_scenario(path, overrides: dict[str, str] | None = None) -> Scenario:
    data = load_scenario_dict(path)
    if overrides:
        data = apply_overrides(data, overrides)
    return build_scenario(data, base_dir=Path(path).parent)


def preset_names() -> list[str]:
    root = resources.files(__package__) / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_path(name: str) -> Path:
    """Filesystem path of a bundled preset scenario."""
    path = resources.files(__package__) / "presets" / f"{name}.ini"
    if not path.is_file():
        raise ScenarioError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    return Path(str(path))


def load_preset(name: str, overrides: dict[str, str] | None = None) -> Scenario:
    return load_scenario(preset_path(name), overrides)
