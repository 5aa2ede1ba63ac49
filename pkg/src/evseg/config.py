"""Run configuration: flat key=value files, every key CLI-overridable.

Keys are either top-level (delta_t_ms, seed, tracking_mode, jobs) or
prefixed by their parameter group: `level1.zeta`, `level2.beta_mdl`,
`tracker.max_corners`. Unknown keys are hard errors so that typos in
tolerance-sensitive parameters cannot pass silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .features import TrackerParams
from .level1 import Level1Params
from .level2 import Level2Params


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    delta_t_ms: float = 30.0          # window width; sensible range 15-35
    seed: int = 0
    tracking_mode: str = "halves"     # "halves" or "across"
    jobs: int = 1
    level1: Level1Params = field(default_factory=Level1Params)
    level2: Level2Params = field(default_factory=Level2Params)
    tracker: TrackerParams = field(default_factory=TrackerParams)

    def __post_init__(self) -> None:
        if self.delta_t_ms <= 0:
            raise ConfigError("delta_t_ms must be positive")
        if self.tracking_mode not in ("halves", "across"):
            raise ConfigError("tracking_mode must be 'halves' or 'across'")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


_GROUPS = {"level1": Level1Params, "level2": Level2Params,
           "tracker": TrackerParams}
_TOP = {f.name: f for f in fields(RunConfig)
        if f.name not in _GROUPS}


def known_keys() -> set[str]:
    keys = set(_TOP)
    for prefix, cls in _GROUPS.items():
        keys |= {f"{prefix}.{f.name}" for f in fields(cls)}
    return keys


def _coerce(text: str, type_hint: str, key: str):
    t = type_hint.replace(" ", "")
    if text.lower() in ("none", "null"):
        if "None" in t:
            return None
        raise ConfigError(f"{key} cannot be none")
    try:
        if t.startswith("bool"):
            return text.lower() in ("1", "true", "yes")
        if t.startswith("int"):
            return int(text)
        if t.startswith("float"):
            return float(text)
        if t.startswith("str"):
            return text
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r}")


def build_config(pairs: dict[str, str]) -> RunConfig:
    """RunConfig from flat string pairs; unknown keys raise ConfigError."""
    unknown = set(pairs) - known_keys()
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    top_kwargs = {}
    group_kwargs: dict[str, dict] = {g: {} for g in _GROUPS}
    for key, value in pairs.items():
        if "." in key:
            group, name = key.split(".", 1)
            fld = {f.name: f for f in fields(_GROUPS[group])}[name]
            group_kwargs[group][name] = _coerce(value, str(fld.type), key)
        else:
            top_kwargs[key] = _coerce(value, str(_TOP[key].type), key)
    try:
        groups = {g: cls(**group_kwargs[g]) for g, cls in _GROUPS.items()}
    except ValueError as exc:
        raise ConfigError(str(exc))
    return RunConfig(**top_kwargs, **groups)


def parse_config_file(source) -> dict[str, str]:
    """key=value lines; blanks and # comments ignored."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    pairs = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value at line {lineno}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    pairs = parse_config_file(path) if path is not None else {}
    if overrides:
        pairs.update(overrides)
    return build_config(pairs)
