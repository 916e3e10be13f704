"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Keys may carry a stream prefix
(``depth.lr = 0.01``) that overrides the bare key for that stream only.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        values[key] = value
    return values


def load_config(path: str | Path | None) -> dict[str, str]:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def dump_config(values: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
