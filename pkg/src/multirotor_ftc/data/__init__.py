"""Bundled example vehicles and scenarios."""
from __future__ import annotations

import json
from importlib import resources

from ..vehicle import VehicleConfig


def _names(kind: str) -> list:
    folder = resources.files(__name__) / kind
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def vehicle_names() -> list:
    return _names("vehicles")


def scenario_names() -> list:
    return _names("scenarios")


def _load(kind: str, name: str) -> dict:
    path = resources.files(__name__) / kind / f"{name.replace('-', '_')}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled {kind[:-1]} named {name!r}; available: {_names(kind)}")
    return json.loads(path.read_text(encoding="utf-8"))


def vehicle(name: str) -> VehicleConfig:
    data = _load("vehicles", name)
    data.setdefault("name", name)
    return VehicleConfig.from_dict(data)


def scenario_dict(name: str) -> dict:
    return _load("scenarios", name)
