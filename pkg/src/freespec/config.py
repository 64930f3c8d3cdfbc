"""Run configuration for the command line tool.

A run is described by a single TOML document (tables ``model`` /
``predict`` / ``simulate`` / ``verify`` / ``output``).  The parsed
document is validated against the JSON schema shipped as
``config_schema.json`` next to this module, command line overrides of the
form ``table.key=value`` are folded in, and the result is frozen into a
:class:`RunConfig` together with a content hash.

The hash covers the tables that determine prediction and simulation
artifacts (``model``, ``predict`` and ``simulate`` minus the seed list);
verification tolerances and the output location are deliberately outside
of it, so re-checking old artifacts with widened tolerances is possible,
while any change to the model itself makes stale artifacts detectable.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import importlib.resources
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import jsonschema

try:
    import tomllib as tomli
except ModuleNotFoundError:        # Python < 3.11
    import tomli

from .measures import (SpectralMeasure, arcsine, finite_atomic,
                       marchenko_pastur, mixture, point_mass, semicircle,
                       uniform)
from .ncpoly import NCPolynomial, ParseError, parse
from .outliers import SpikeSet

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "load_schema",
    "parse_override",
    "document_hash",
    "DEFAULT_TOLERANCES",
]

DEFAULT_TOLERANCES = {
    "position_tol": 0.15,
    "ks_tol": 0.06,
    "overlap_tol": 0.05,
    "mass_tol": 5e-3,
}

_GRID_POINTS_DEFAULT = 1001


class ConfigError(ValueError):
    """Malformed or semantically invalid run configuration."""


def load_schema() -> dict:
    """The published configuration schema as a plain dict."""
    ref = importlib.resources.files("freespec") / "config_schema.json"
    return json.loads(ref.read_text())


def parse_override(item: str):
    """Split ``table.key=value`` into a key path and a parsed value.

    Values are read as Python literals where possible (numbers, lists,
    quoted strings); anything else is kept as a bare string, with
    ``true``/``false`` mapped to booleans to match TOML spelling.
    """
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form KEY=VALUE")
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return tuple(key.split(".")), raw.lower() == "true"
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw
    return tuple(key.split(".")), value


def _apply_override(doc: dict, path: Sequence[str], value) -> None:
    node = doc
    for part in path[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(
                f"override path {'.'.join(path)} descends into non-table "
                f"value at {part!r}")
        node = nxt
    node[path[-1]] = value


def document_hash(doc: dict) -> str:
    """sha256 over the artifact-determining part of the document.

    ``verify`` and ``output`` never influence what predict/simulate write,
    and the seed list is recorded per result file, so all three stay out
    of the hash.
    """
    subset = copy.deepcopy({k: v for k, v in doc.items()
                            if k not in ("verify", "output")})
    if "simulate" in subset:
        subset["simulate"].pop("seeds", None)
        if not subset["simulate"]:
            del subset["simulate"]
    blob = json.dumps(subset, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# object construction
# ---------------------------------------------------------------------------

def _build_measure(spec: dict) -> SpectralMeasure:
    kind = spec["kind"]
    if kind == "point_mass":
        return point_mass(float(spec["location"]))
    if kind == "semicircle":
        return semicircle(float(spec.get("mean", 0.0)),
                          float(spec.get("variance", 1.0)))
    if kind == "uniform":
        return uniform(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)))
    if kind == "arcsine":
        return arcsine(float(spec.get("a", -2.0)), float(spec.get("b", 2.0)))
    if kind == "marchenko_pastur":
        return marchenko_pastur()
    if kind == "finite_atomic":
        return finite_atomic([(float(a), float(w)) for a, w in spec["atoms"]])
    if kind == "mixture":
        return mixture([(_build_measure(c), float(c["weight"]))
                        for c in spec["components"]])
    raise ConfigError(f"unknown measure kind {kind!r}")


def _inline_pencil(spec: Optional[dict]):
    if spec is None:
        return None
    import numpy as np
    gammas = []
    for j in range(3):
        re = np.asarray(spec[f"gamma{j}"], dtype=float)
        im_spec = spec.get(f"gamma{j}_im")
        im = np.zeros_like(re) if im_spec is None else np.asarray(im_spec,
                                                                  dtype=float)
        if re.ndim != 2 or re.shape[0] != re.shape[1] or re.shape != im.shape:
            raise ConfigError(
                f"gamma{j} must be square and match its imaginary part")
        gammas.append(re + 1j * im)
    if len({g.shape for g in gammas}) != 1:
        raise ConfigError("pencil coefficients must share one size")
    return tuple(gammas)


@dataclass(frozen=True)
class RunConfig:
    """Validated, override-applied run description."""

    doc: dict
    poly: NCPolynomial
    mu: SpectralMeasure
    nu: SpectralMeasure
    spikes: SpikeSet
    inline_pencil: Optional[tuple]
    grid_spec: tuple                     # (min, max, points) — min/max may be None
    eta_schedule: Optional[tuple]
    search_intervals: tuple
    criterion: str
    ensemble: str
    sizes: tuple
    seeds: tuple
    bulk_placement: str
    tolerances: dict
    outdir: str
    overridden: tuple                    # dotted keys set via --override
    config_hash: str


def load_config(path: str, overrides: Sequence[str] = (),
                out: Optional[str] = None,
                seed: Optional[int] = None) -> RunConfig:
    """Read, validate and freeze a run configuration.

    ``overrides`` are ``table.key=value`` strings applied after the file is
    read and before validation; ``out`` and ``seed`` are the corresponding
    command line flags and win over the file.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}")

    overridden = []
    for item in overrides:
        key_path, value = parse_override(item)
        _apply_override(doc, key_path, value)
        overridden.append(".".join(key_path))
    if seed is not None:
        doc.setdefault("simulate", {})["seeds"] = [int(seed)]

    schema = load_schema()
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        where = "/".join(str(p) for p in best.absolute_path) or "(top level)"
        raise ConfigError(f"config does not match the schema at {where}: "
                          f"{best.message}")

    model = doc["model"]
    try:
        poly = parse(model["polynomial"], arity=2)
    except ParseError as exc:
        raise ConfigError(f"model.polynomial: {exc}")
    if not poly.is_selfadjoint():
        raise ConfigError("model.polynomial must be selfadjoint")

    try:
        mu = _build_measure(model["mu"])
        nu = _build_measure(model["nu"])
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"model measure: {exc}")

    try:
        spikes = SpikeSet.from_values(model.get("spikes", ()), mu=mu)
    except ValueError as exc:
        raise ConfigError(f"model.spikes: {exc}")

    inline = _inline_pencil(model.get("pencil"))

    predict = doc.get("predict", {})
    gmin = predict.get("grid_min")
    gmax = predict.get("grid_max")
    if (gmin is None) != (gmax is None):
        raise ConfigError("predict.grid_min and predict.grid_max "
                          "must be given together")
    if gmin is not None and not gmin < gmax:
        raise ConfigError("predict.grid_min must be below predict.grid_max")
    grid_spec = (None if gmin is None else float(gmin),
                 None if gmax is None else float(gmax),
                 int(predict.get("grid_points", _GRID_POINTS_DEFAULT)))

    eta = predict.get("eta_schedule")
    if eta is not None:
        eta = tuple(float(e) for e in eta)
        if any(b >= a for a, b in zip(eta, eta[1:])):
            raise ConfigError("predict.eta_schedule must decrease strictly")

    intervals = []
    for pair in predict.get("search_intervals", ()):
        a, b = float(pair[0]), float(pair[1])
        if not a < b:
            raise ConfigError(f"search interval ({a}, {b}) is empty")
        intervals.append((a, b))

    simulate = doc.get("simulate", {})
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update({k: float(v) for k, v in doc.get("verify", {}).items()})

    outdir = out if out is not None else doc.get("output", {}).get(
        "directory", ".")

    return RunConfig(
        doc=doc,
        poly=poly,
        mu=mu,
        nu=nu,
        spikes=spikes,
        inline_pencil=inline,
        grid_spec=grid_spec,
        eta_schedule=eta,
        search_intervals=tuple(intervals),
        criterion=predict.get("criterion", "regularized"),
        ensemble=simulate.get("ensemble", "unitary_invariant"),
        sizes=tuple(int(n) for n in simulate.get("sizes", (1000,))),
        seeds=tuple(int(s) for s in simulate.get("seeds", (0,))),
        bulk_placement=simulate.get("bulk_placement", "quantiles"),
        tolerances=tolerances,
        outdir=str(outdir),
        overridden=tuple(sorted(overridden)),
        config_hash=document_hash(doc),
    )
