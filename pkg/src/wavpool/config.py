"""Flat ``key = value`` config files.

One setting per line, ``#`` starts a comment, values are JSON literals
(``0.001``, ``true``, ``"adam"``, ``[2, 2, 2]``); a bare word is read as a
string. Example::

    base_hidden = 256
    scaling = true
    pool_kernel = [2, 2, 2]
    optimizer = adam
    learning_rate = 0.001
"""
from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError


def parse_config(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError:
            values[key] = raw
    return values


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in values.items())
