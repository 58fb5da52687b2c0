"""YAML loaders for scenario configs and sweep specs."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Tuple

import yaml

from .channel import Scenario, ScenarioError, dbm_to_watts
from .experiments import SweepSpec


class ConfigError(ValueError):
    pass


_SCENARIO_FIELDS = {f.name for f in dataclasses.fields(Scenario)}
# layout of the multi-tag circle, used when sweeping K
_EXTRA = {"xi_dbm", "tag_center", "tag_radius"}


def _read_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return data


def scenario_from_dict(data: dict) -> Tuple[Scenario, dict]:
    """Build a :class:`Scenario`; returns it with the multi-tag layout extras.

    ``xi_dbm`` is accepted in place of ``xi_watts`` (``-inf`` or ``null`` means
    a semi-passive tag).  When ``tag_positions`` is absent, ``K`` tags are put
    on the ``tag_center``/``tag_radius`` circle.
    """
    data = dict(data)
    unknown = set(data) - _SCENARIO_FIELDS - _EXTRA
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    extras = {k: data.pop(k) for k in list(data) if k in _EXTRA}
    if "xi_dbm" in extras:
        if "xi_watts" in data:
            raise ConfigError("give either xi_dbm or xi_watts, not both")
        x = extras["xi_dbm"]
        data["xi_watts"] = 0.0 if x is None or x == float("-inf") else float(dbm_to_watts(x))
    layout = {"tag_center": extras.get("tag_center"), "tag_radius": float(extras.get("tag_radius", 5.0))}
    if "tag_positions" not in data:
        if layout["tag_center"] is None:
            raise ConfigError("config needs tag_positions or tag_center")
        from .experiments import tag_circle
        data["tag_positions"] = tag_circle(layout["tag_center"], layout["tag_radius"],
                                           int(data.get("K", 1)))
    data.setdefault("K", len(data["tag_positions"]))
    for key in ("ce_position", "reader_position", "irs_center"):
        if key not in data:
            raise ConfigError(f"config is missing {key}")
    try:
        sc = Scenario(**data)
    except (ScenarioError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return sc, layout


def load_scenario(path) -> Tuple[Scenario, dict]:
    return scenario_from_dict(_read_yaml(path))


def load_sweep(path) -> SweepSpec:
    data = _read_yaml(path)
    try:
        return SweepSpec(swept_variable=data["swept_variable"], values=list(data["values"]),
                         methods=list(data["methods"]),
                         realizations=int(data.get("realizations", 100)),
                         master_seed=(None if data.get("master_seed") is None
                                      else int(data["master_seed"])))
    except KeyError as exc:
        raise ConfigError(f"{path}: sweep spec is missing {exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
