"""Scenario files: parsing, validation, defaults and sweep variants.

The file format is JSON with powers in dBm, ``ref_gain`` in dB and distances
in meters. A zero-watt power is written as ``-Infinity``.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from skyjam.models import ScenarioConfig

log = logging.getLogger(__name__)

DBM_FIELDS = ("noise_power", "p_s_ave", "p_j_ave", "p_s_max", "p_j_max")
SWEEP_PARAMETERS = ("period", "eve_radius", "interference_threshold", "r_min")
SWEEP_DEFAULTS = {
    "period": [80.0, 100.0, 120.0, 140.0],
    "eve_radius": [0.0, 10.0, 20.0, 30.0],
    "interference_threshold": [-100.0, -90.0, -80.0, -70.0, -60.0, -50.0],  # dBm
    "r_min": [0.0, 0.1, 0.5, 1.0],
}

DISC_CLEARANCE = 1.0  # meters between the initial S circle and the uncertainty disc


class ScenarioError(ValueError):
    pass


# --- Units ---

def _canonical(value: float) -> float:
    return float(f"{value:.12g}")


def dbm_to_watts(dbm: float) -> float:
    return _canonical(10 ** ((float(dbm) - 30) / 10))


def watts_to_dbm(watts: float) -> float:
    return 10 * math.log10(watts) + 30 if watts > 0 else -math.inf


def db_to_linear(db: float) -> float:
    return _canonical(10 ** (float(db) / 10))


def linear_to_db(value: float) -> float:
    return 10 * math.log10(value) if value > 0 else -math.inf


# --- Parsing ---

def _validation_message(exc: ValidationError) -> str:
    err = exc.errors()[0]
    msg = err["msg"].removeprefix("Value error, ")
    loc = ".".join(str(part) for part in err.get("loc", ()))
    return f"{loc}: {msg}" if loc else msg


def _validate(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(_validation_message(e)) from None


def load_scenario(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"parse error: {e}") from None
    if not isinstance(data, dict):
        raise ScenarioError("parse error: top level must be an object")

    unknown = sorted(set(data) - set(ScenarioConfig.model_fields))
    if unknown:
        raise ScenarioError(f"unknown key: {', '.join(unknown)}")

    try:
        for name in DBM_FIELDS:
            if name in data:
                data[name] = dbm_to_watts(data[name])
        if "ref_gain" in data:
            data["ref_gain"] = db_to_linear(data["ref_gain"])
        threshold = data.get("interference_threshold")
        if isinstance(threshold, list):
            data["interference_threshold"] = [dbm_to_watts(t) for t in threshold]
        elif threshold is not None:
            data["interference_threshold"] = dbm_to_watts(threshold)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"parse error: {e}") from None

    return _validate(data)


def load_scenario_file(path: str | Path) -> ScenarioConfig:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def dump_scenario(config: ScenarioConfig) -> str:
    data = config.model_dump(mode="json")
    for name in DBM_FIELDS:
        data[name] = watts_to_dbm(data[name])
    data["ref_gain"] = linear_to_db(data["ref_gain"])
    data["interference_threshold"] = [watts_to_dbm(t) for t in data["interference_threshold"]]
    return json.dumps(data, indent=2) + "\n"


# --- Defaults ---

def centroid(config: ScenarioConfig) -> np.ndarray:
    return np.mean(np.asarray(config.user_positions, dtype=float), axis=0)


def _chord_cap(v_max: float, slot_len: float, num_slots: int) -> float:
    # N points close the circle in N - 1 equal steps.
    if num_slots < 3:
        return math.inf
    return slot_len * v_max / (2 * math.sin(math.pi / (num_slots - 1)))


def _radii(users, period, num_slots, slot_len, v_max_s, v_max_j, eve_center=None, eve_radius=0.0) -> tuple[float, float]:
    users = np.asarray(users, dtype=float)
    center = users.mean(axis=0)
    reach = float(np.max(np.linalg.norm(users - center, axis=1)))
    r_s = min(reach, v_max_s * period / (2 * math.pi), _chord_cap(v_max_s, slot_len, num_slots))
    if eve_center is not None:
        # S may not cross the disc; pull its circle inside when there is room.
        offset = float(np.linalg.norm(center - np.asarray(eve_center, dtype=float)))
        inner = offset - eve_radius - DISC_CLEARANCE
        if 0 < inner < r_s < offset + eve_radius + DISC_CLEARANCE:
            r_s = inner
    r_j = min(r_s / 2, v_max_j * period / (2 * math.pi), _chord_cap(v_max_j, slot_len, num_slots))
    return r_s, r_j


def initial_radii(config: ScenarioConfig) -> tuple[float, float]:
    """Radii of the circular initial trajectories of S and J."""
    return _radii(
        config.user_positions, config.period, config.num_slots,
        config.slot_len, config.v_max_s, config.v_max_j,
        config.eve_center, config.eve_radius,
    )


def default_paper_scenario(period: float = 100.0, **overrides) -> ScenarioConfig:
    """Desk-scale default setup: three users, two PUs, one uncertain eavesdropper.

    Any field can be overridden. Counts follow the position lists, and unless
    given explicitly both UAVs start and end on the easternmost point of their
    initial circle.
    """
    slot_len = float(overrides.pop("slot_len", 1.0))
    data = {
        "user_positions": ((-55.0, -10.0), (0.0, -65.0), (50.0, -5.0)),
        "pu_positions": ((30.0, 25.0), (-30.0, 25.0)),
        "eve_center": (15.0, -15.0),
        "eve_radius": 10.0,
        "alt_s": 15.0,
        "alt_j": 10.0,
        "ref_gain": 1e-3,
        "noise_power": 1e-12,
        "p_s_ave": 0.1,
        "p_j_ave": 0.1,
        "interference_threshold": 1e-11,
        "v_max_s": 7.0,
        "v_max_j": 7.0,
        "r_min": 0.1,
        "epsilon": 1e-3,
    }
    data.update(overrides)
    data.setdefault("p_s_max", 4 * data["p_s_ave"])
    data.setdefault("p_j_max", 4 * data["p_j_ave"])
    data.setdefault("num_users", len(data["user_positions"]))
    data.setdefault("num_pus", len(data["pu_positions"]))

    num_slots = max(1, round(period / slot_len))
    data["period"] = float(period)
    data["num_slots"] = num_slots
    data["slot_len"] = float(period) / num_slots

    center = np.mean(np.asarray(data["user_positions"], dtype=float), axis=0)
    r_s, r_j = _radii(
        data["user_positions"], data["period"], num_slots,
        data["slot_len"], data["v_max_s"], data["v_max_j"],
        data["eve_center"], data["eve_radius"],
    )
    east_s = (float(center[0] + r_s), float(center[1]))
    east_j = (float(center[0] + r_j), float(center[1]))
    data.setdefault("start_s", east_s)
    data.setdefault("end_s", data["start_s"])
    data.setdefault("start_j", east_j)
    data.setdefault("end_j", data["start_j"])
    return _validate(data)


def with_parameter(config: ScenarioConfig, name: str, value: float) -> ScenarioConfig:
    """Copy of ``config`` with one sweep parameter replaced and re-validated."""
    if name not in SWEEP_PARAMETERS:
        raise ScenarioError(f"unknown sweep parameter: {name}")
    data = config.model_dump()
    if name == "period":
        num_slots = max(1, round(value / config.slot_len))
        data.update(period=float(value), num_slots=num_slots, slot_len=float(value) / num_slots)
    elif name == "interference_threshold":
        data["interference_threshold"] = (float(value),) * config.num_pus
    else:
        data[name] = float(value)
    return _validate(data)
