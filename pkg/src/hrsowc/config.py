"""
Scenario/experiment configuration loaded from a YAML (or JSON) key-value file.

Recognised keys::

    room:      {length, width, height}               metres
    aps:       [[x, y, z], ...]                      metres; default 2x2 grid
    users:     {count, seed, height}
    demands:   {min, max}                            bit/s/Hz
    constants: {wavelength, beam_waist, bandwidth, responsivity, nsd,
                receiver_area, fov_deg, num_photodiodes, pd_tilt_deg,
                beam_pointing}
    grouping:  {groups}
    power:     {p_total, r_min}
    solver:    {utility, restarts, rel_tol, max_iter}
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import PhysicalConstants, Scenario, default_ap_positions, make_scenario
from .optimizer import ConstraintSet, default_constraints

__all__ = ["ExperimentConfig", "load_config", "ConfigError"]


class ConfigError(ValueError):
    pass


def _num(value, key):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    room: tuple = (5.0, 5.0, 3.0)
    aps: tuple | None = None
    num_users: int = 6
    user_seed: int = 0
    user_height: float = 0.85
    demand_min: float = 0.5
    demand_max: float = 2.0
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    num_groups: int = 2
    p_total: float = 1.0
    r_min: float | None = None
    utility: str = "sum"
    restarts: int = 8
    rel_tol: float = 1e-8
    max_iter: int = 5000

    def __post_init__(self):
        if self.demand_min <= 0 or self.demand_max < self.demand_min:
            raise ConfigError("demands must satisfy 0 < min <= max")
        if self.num_users < 1 or not 1 <= self.num_groups <= self.num_users:
            raise ConfigError("need users.count >= 1 and 1 <= grouping.groups <= users.count")
        if self.p_total < 0:
            raise ConfigError("power.p_total must be nonnegative")

    @property
    def ap_positions(self) -> np.ndarray:
        if self.aps is None:
            return default_ap_positions(self.room)
        return np.asarray(self.aps, dtype=float)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_constants(self, **changes) -> "ExperimentConfig":
        return self.replace(constants=dataclasses.replace(self.constants, **changes))

    def scenario(self, seed: int | None = None, rng=None, num_users: int | None = None) -> Scenario:
        seed = self.user_seed if seed is None else seed
        return make_scenario(num_users or self.num_users, seed=seed, room=self.room,
                             ap_positions=self.ap_positions, user_height=self.user_height,
                             demand_range=(self.demand_min, self.demand_max),
                             constants=self.constants, rng=rng)

    def constraints(self, scenario: Scenario, num_groups: int | None = None,
                    p_total: float | None = None) -> ConstraintSet:
        return default_constraints(scenario.num_users, num_groups or self.num_groups,
                                   self.p_total if p_total is None else p_total,
                                   demands=scenario.demands, r_min=self.r_min)

    def solver_kwargs(self) -> dict:
        return dict(mode=self.utility, n_random=self.restarts, rel_tol=self.rel_tol,
                    max_iter=self.max_iter)

    def to_dict(self) -> dict:
        c = self.constants
        return {
            "room": {"length": self.room[0], "width": self.room[1], "height": self.room[2]},
            "aps": self.ap_positions.tolist(),
            "users": {"count": self.num_users, "seed": self.user_seed, "height": self.user_height},
            "demands": {"min": self.demand_min, "max": self.demand_max},
            "constants": {
                "wavelength": c.wavelength, "beam_waist": c.beam_waist,
                "bandwidth": c.laser_bandwidth, "responsivity": c.responsivity, "nsd": c.nsd,
                "receiver_area": c.receiver_area_total, "fov_deg": math.degrees(c.fov_half_angle),
                "num_photodiodes": c.num_photodiodes, "pd_tilt_deg": math.degrees(c.pd_tilt),
                "beam_pointing": c.beam_pointing,
            },
            "grouping": {"groups": self.num_groups},
            "power": {"p_total": self.p_total, "r_min": self.r_min},
            "solver": {"utility": self.utility, "restarts": self.restarts,
                       "rel_tol": self.rel_tol, "max_iter": self.max_iter},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        known = {"room", "aps", "users", "demands", "constants", "grouping", "power", "solver"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        kw = {}
        room = data.get("room") or {}
        if room:
            kw["room"] = tuple(_num(room[k], f"room.{k}") for k in ("length", "width", "height"))
        if data.get("aps") is not None:
            aps = np.asarray([[_num(v, "aps") for v in ap] for ap in data["aps"]])
            if aps.ndim != 2 or aps.shape[1] != 3:
                raise ConfigError("aps must be a list of [x, y, z] points")
            kw["aps"] = tuple(map(tuple, aps.tolist()))
        users = data.get("users") or {}
        if "count" in users:
            kw["num_users"] = int(users["count"])
        if "seed" in users:
            kw["user_seed"] = int(users["seed"])
        if "height" in users:
            kw["user_height"] = _num(users["height"], "users.height")
        demands = data.get("demands") or {}
        if "min" in demands:
            kw["demand_min"] = _num(demands["min"], "demands.min")
        if "max" in demands:
            kw["demand_max"] = _num(demands["max"], "demands.max")

        consts = dict(data.get("constants") or {})
        ck = {}
        mapping = {"wavelength": "wavelength", "beam_waist": "beam_waist",
                   "bandwidth": "laser_bandwidth", "responsivity": "responsivity",
                   "nsd": "nsd", "receiver_area": "receiver_area_total"}
        for key, attr in mapping.items():
            if key in consts:
                ck[attr] = _num(consts.pop(key), f"constants.{key}")
        if "fov_deg" in consts:
            ck["fov_half_angle"] = math.radians(_num(consts.pop("fov_deg"), "constants.fov_deg"))
        if "pd_tilt_deg" in consts:
            ck["pd_tilt"] = math.radians(_num(consts.pop("pd_tilt_deg"), "constants.pd_tilt_deg"))
        if "num_photodiodes" in consts:
            ck["num_photodiodes"] = int(consts.pop("num_photodiodes"))
        if "beam_pointing" in consts:
            ck["beam_pointing"] = str(consts.pop("beam_pointing"))
        if consts:
            raise ConfigError(f"unknown constants key(s): {sorted(consts)}")
        try:
            kw["constants"] = PhysicalConstants(**ck)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

        grouping = data.get("grouping") or {}
        if "groups" in grouping:
            kw["num_groups"] = int(grouping["groups"])
        power = data.get("power") or {}
        if "p_total" in power:
            kw["p_total"] = _num(power["p_total"], "power.p_total")
        if power.get("r_min") is not None:
            kw["r_min"] = _num(power["r_min"], "power.r_min")
        solver = data.get("solver") or {}
        if "utility" in solver:
            kw["utility"] = str(solver["utility"])
        if "restarts" in solver:
            kw["restarts"] = int(solver["restarts"])
        if "rel_tol" in solver:
            kw["rel_tol"] = _num(solver["rel_tol"], "solver.rel_tol")
        if "max_iter" in solver:
            kw["max_iter"] = int(solver["max_iter"])
        return cls(**kw)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(data)
