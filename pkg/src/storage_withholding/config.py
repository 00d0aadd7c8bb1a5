"""JSON run configuration.

A configuration is a JSON object.  Every section is optional except where a
command needs it; see the README for the full schema.  Example::

    {
      "storage": {"power": 10, "energy": 40, "efficiency": 0.9, "discharge_cost": 25},
      "bounds": {"floor": 5, "cap": 150},
      "forecasts": {"kind": "gaussian", "mu": 26.2, "sigma": 50, "horizon": 24},
      "end_value": {"slope": 0},
      "seed": 7
    }
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ModelError, PriceBounds, PriceDistribution, StorageSpec, ValueFunction, mean_of
from . import experiments
from .market import Scenario, forecasts_from_prices
from .value import default_end_value

DEFAULT_POINTS = 1001

_STORAGE_KEYS = {"power", "energy", "efficiency", "discharge_cost", "step"}
_SECTIONS = {"storage", "bounds", "forecasts", "end_value", "grid_points", "segments", "soc",
             "seed", "scenario", "simulate", "sweep", "clear", "audit", "limits", "value_fn", "name"}


class ConfigError(ModelError):
    """The configuration file is missing, malformed or inconsistent."""


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def _path_or_scalar(value, horizon: Optional[int], where: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ConfigError(f"{where} must be a number or a list of numbers")
    if arr.size == 1 and horizon:
        arr = np.full(horizon, arr[0])
    if horizon and arr.size != horizon:
        raise ConfigError(f"{where} has {arr.size} entries, horizon is {horizon}")
    return arr


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration plus the raw mapping it came from."""

    raw: dict
    source: str = ""

    # -- identity ---------------------------------------------------------
    @property
    def digest(self) -> str:
        """Short hash of the canonical JSON, stable across key order and whitespace."""
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"section {name!r} must be an object")
        return sec

    # -- scalar knobs -----------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def points(self) -> int:
        n = int(self.raw.get("grid_points", DEFAULT_POINTS))
        if n < 2:
            raise ConfigError("grid_points must be >= 2")
        return n

    @property
    def segments(self) -> int:
        k = int(self.raw.get("segments", 10))
        if k < 1:
            raise ConfigError("segments must be >= 1")
        return k

    @property
    def soc(self) -> float:
        return float(self.raw.get("soc", 0.0))

    # -- domain objects ---------------------------------------------------
    def storage(self) -> StorageSpec:
        sec = self.section("storage")
        unknown = set(sec) - _STORAGE_KEYS
        if unknown:
            raise ConfigError(f"storage: unknown keys {sorted(unknown)}")
        try:
            return StorageSpec(power=float(_require(sec, "power", "storage")),
                               energy=float(_require(sec, "energy", "storage")),
                               efficiency=float(sec.get("efficiency", 0.9)),
                               discharge_cost=float(sec.get("discharge_cost", 25.0)),
                               step=float(sec.get("step", 1.0)))
        except ConfigError:
            raise
        except ModelError as exc:
            raise ConfigError(f"storage: {exc}") from exc

    def bounds(self) -> Optional[PriceBounds]:
        b = self.raw.get("bounds")
        if b is None:
            return None
        try:
            if isinstance(b, dict):
                return PriceBounds(float(_require(b, "floor", "bounds")), float(_require(b, "cap", "bounds")))
            lo, hi = b
            return PriceBounds(float(lo), float(hi))
        except ConfigError:
            raise
        except (ModelError, TypeError, ValueError) as exc:
            raise ConfigError(f"bounds: {exc}") from exc

    def mu_path(self) -> np.ndarray:
        """Mean price per period, from ``forecasts``."""
        sec = self.raw.get("forecasts")
        if sec is None:
            raise ConfigError("missing section 'forecasts'")
        if isinstance(sec, list):
            return np.array([mean_of(d) for d in self.forecasts()])
        return _path_or_scalar(_require(sec, "mu", "forecasts"), sec.get("horizon"), "forecasts.mu")

    def forecast_means(self) -> np.ndarray:
        """Actual per-period means, after any truncation to the bounds."""
        return np.array([mean_of(d) for d in self.forecasts()])

    def forecasts(self) -> list:
        """Per-period price distributions.

        Either a list of distribution objects (``{"kind": ..., ...}``) or a
        family description ``{"kind", "mu", "sigma", "horizon"}`` where ``mu``
        and ``sigma`` are scalars or per-period lists.  Family forecasts use
        the top-level ``bounds`` for truncation.
        """
        sec = self.raw.get("forecasts")
        if sec is None:
            raise ConfigError("missing section 'forecasts'")
        try:
            if isinstance(sec, list):
                if not sec:
                    raise ConfigError("forecasts list is empty")
                return [PriceDistribution.from_dict(d) for d in sec]
            kind = sec.get("kind", "gaussian")
            mu = self.mu_path()
            sigma = _path_or_scalar(sec.get("sigma", 0.0), mu.size, "forecasts.sigma")
            if kind == "point_mass":
                sigma = np.zeros_like(mu)
            elif kind not in ("gaussian", "bounded_uniform"):
                raise ConfigError(f"forecasts.kind {kind!r} needs the list form")
            family = "gaussian" if kind == "point_mass" else kind
            return forecasts_from_prices(mu, sigma, self.bounds(), family)
        except ConfigError:
            raise
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"forecasts: {exc}") from exc

    def end_value(self, spec: StorageSpec) -> ValueFunction:
        """End-of-horizon value; defaults to the remaining energy sold at the price floor."""
        sec = self.raw.get("end_value")
        points = self.points
        if sec is None:
            return default_end_value(spec, self.bounds(), points)
        try:
            if "slope" in sec:
                return ValueFunction.linear(float(sec["slope"]), spec.energy, points)
            if "slopes" in sec:
                coarse = ValueFunction.from_slopes(np.asarray(sec["slopes"], float), spec.energy)
                g = np.linspace(0.0, spec.energy, points)
                return ValueFunction(g, np.interp(g, coarse.breakpoints, coarse.values))
        except ModelError as exc:
            raise ConfigError(f"end_value: {exc}") from exc
        raise ConfigError("end_value needs 'slope' or 'slopes'")

    def end_slope_at_zero(self, spec: StorageSpec) -> float:
        return float(self.end_value(spec).slopes[0])

    def scenario(self) -> Scenario:
        """Market scenario: a preset name or an explicit fleet/load description."""
        sec = self.raw.get("scenario")
        if sec is None:
            raise ConfigError("missing section 'scenario'")
        try:
            preset = sec.get("preset")
            if preset == "ideal":
                return experiments.ideal_scenario(int(sec.get("units", 1)))
            if preset == "practical":
                return experiments.practical_scenario(sec.get("day", "shoulder"), int(sec.get("units", 10)),
                                                      bool(sec.get("storage_in_dam", False)))
            if preset is not None:
                raise ConfigError(f"unknown scenario preset {preset!r}")
            return Scenario.from_dict(sec)
        except ConfigError:
            raise
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from exc


def parse_config(raw: dict, source: str = "") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    return RunConfig(raw, source)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_config(raw, str(p))
