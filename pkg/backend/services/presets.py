"""Named scenario presets stored in data/presets.json."""

from __future__ import annotations

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

from services.errors import ConfigurationError
from services.geometry import NetworkConfig, dbm_to_watt, parse_network_config

logger = logging.getLogger(__name__)

_PRESETS_PATH = Path(__file__).resolve().parent.parent / "data" / "presets.json"


@lru_cache(maxsize=1)
def _load_presets() -> Dict[str, Any]:
    with open(_PRESETS_PATH, "r", encoding="utf-8") as f:
        return json.load(f)["presets"]


def _to_watts(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Keys ending in _dbm become the matching watt field."""
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        if key.endswith("_dbm"):
            out[key.removesuffix("_dbm")] = dbm_to_watt(float(value))
        else:
            out[key] = value
    return out


def preset_names() -> list[str]:
    return sorted(_load_presets())


def preset_overrides(name: str) -> Dict[str, Any]:
    presets = _load_presets()
    if name not in presets:
        raise ConfigurationError(f"unknown preset {name!r}, expected one of {sorted(presets)}")
    return _to_watts(presets[name]["config"])


def load_preset(name: str, **overrides) -> NetworkConfig:
    return parse_network_config({**preset_overrides(name), **overrides})


def list_presets() -> Dict[str, Dict[str, Any]]:
    presets = _load_presets()
    return {
        name: {"description": entry.get("description", ""), "config": load_preset(name).model_dump()}
        for name, entry in sorted(presets.items())
    }
