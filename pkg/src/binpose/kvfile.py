"""Plain-text ``key=value`` files used for scenes, suites and fitter settings.

Blank lines and ``#`` comments are ignored. Keys may repeat; readers decide
whether that is meaningful.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Iterable


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def read_kv(path) -> list[tuple[str, str]]:
    with open(path) as fh:
        return parse_kv(fh.read())


def format_kv(pairs: Iterable[tuple[str, Any]]) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


def fmt(x) -> str:
    """Shortest round-trip text for a number or a sequence of numbers."""
    if isinstance(x, (list, tuple)) or getattr(x, "ndim", 0) > 0:
        return " ".join(fmt(v) for v in list(x))
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def apply_overrides(obj, pairs: Iterable[tuple[str, str]], prefix: str = ""):
    """Return a copy of a dataclass with matching scalar fields replaced.

    Keys may be bare (``max_iterations``) or prefixed (``icp.max_iterations``).
    Unknown keys are ignored so one config file can serve several sections.
    """
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in pairs:
        if prefix and key.startswith(prefix + "."):
            key = key[len(prefix) + 1:]
        if key not in fields:
            continue
        current = getattr(obj, key)
        try:
            if isinstance(current, bool):
                changes[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                changes[key] = int(value)
            elif isinstance(current, float):
                changes[key] = float(value)
            elif isinstance(current, tuple):
                changes[key] = tuple(float(v) for v in value.split())
            else:
                changes[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return dataclasses.replace(obj, **changes)
