"""Scenario configuration files (TOML) and run reports."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from caifsim.errors import ConfigError

Adversary = Union[str, tuple]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    kind: str
    seed: int = 0
    devices: int = 1
    compliant: tuple[str, ...] | None = None  # None: every role
    adversary: Adversary = "passive"
    assertions: tuple[str, ...] = ()  # empty: every check the scenario makes

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("name must be a non-empty string")
        if not isinstance(self.kind, str):
            raise ConfigError("kind must be a string")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be an integer in [0, 2**64)")
        if isinstance(self.devices, bool) or not isinstance(self.devices, int) or self.devices < 1:
            raise ConfigError("devices must be a positive integer")

    def scenario_kwargs(self) -> dict:
        kw = {"adversary": self.adversary, "devices": self.devices}
        if self.compliant is not None:
            kw["compliant"] = self.compliant
        return kw


def _strings(key: str, v) -> tuple[str, ...]:
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{key} must be a list of strings")
    return tuple(v)


def parse_config(data: dict) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    for key in ("name", "kind"):
        if key not in data:
            raise ConfigError(f"missing key: {key}")
    d = dict(data)
    if "compliant" in d:
        d["compliant"] = None if d["compliant"] == "all" else _strings("compliant", d["compliant"])
    if "adversary" in d and not isinstance(d["adversary"], str):
        d["adversary"] = _strings("adversary", d["adversary"])
    if "assertions" in d:
        d["assertions"] = _strings("assertions", d["assertions"])
    return ScenarioConfig(**d)


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)


@dataclass
class RunReport:
    name: str
    kind: str
    seed: int
    assertions: dict[str, bool]
    event_count: int
    log_digest: str
    missing: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.assertions.values()) and not self.missing

    def to_json(self) -> str:
        d = asdict(self)
        d["ok"] = self.ok
        return json.dumps(d, sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [f"scenario {self.name} ({self.kind}, seed {self.seed})"]
        lines += [f"  {'PASS' if v else 'FAIL'}  {k}" for k, v in self.assertions.items()]
        lines += [f"  FAIL  {k} (not produced by this scenario)" for k in self.missing]
        lines.append(f"  events {self.event_count}  digest {self.log_digest}")
        return "\n".join(lines)
