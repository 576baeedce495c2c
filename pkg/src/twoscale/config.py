"""Flat ``key = value`` files used for plant parameters and scenarios.

One entry per line, ``#`` starts a comment, SI units throughout.  Keys are
case-insensitive and ``-``/``_`` are interchangeable, so ``r-load`` and
``r_load`` name the same field.  Matrix values use ``,`` between entries
and ``;`` between rows.
"""

import dataclasses
from pathlib import Path

import numpy as np

from .errors import ParseError


def normalize_key(key):
    return key.strip().lower().replace("-", "_")


def parse_lines(text):
    """Yield ``(line_number, key, raw_value)`` for each non-blank entry."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = line.split("=", 1)
        key = normalize_key(key)
        if not key:
            raise ParseError("empty key", lineno)
        yield lineno, key, value.strip()


def read_text(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc


def parse_float(value, lineno=None, key=None):
    try:
        out = float(value)
    except ValueError:
        where = f" for {key}" if key else ""
        raise ParseError(f"invalid number{where}: {value!r}", lineno) from None
    if not np.isfinite(out):
        raise ParseError(f"non-finite value for {key}: {value!r}", lineno)
    return out


def parse_matrix(value, lineno=None, key=None):
    rows = [r.strip() for r in value.split(";") if r.strip()]
    if not rows:
        raise ParseError(f"empty matrix for {key}", lineno)
    data = [[parse_float(v, lineno, key) for v in row.split(",")] for row in rows]
    if len({len(r) for r in data}) != 1:
        raise ParseError(f"ragged matrix for {key}", lineno)
    return np.array(data, dtype=float)


def parse_vector(value, lineno=None, key=None):
    return np.array([parse_float(v, lineno, key) for v in value.split(",") if v.strip()], dtype=float)


def build_dataclass(cls, entries, source="parameters"):
    """Instantiate ``cls`` from ``{key: (lineno, raw)}``; unknown keys and
    missing required fields raise ParseError."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, (lineno, raw) in entries.items():
        if key not in fields:
            raise ParseError(f"unknown key {key!r} in {source}", lineno)
        ftype = fields[key].type
        if ftype in (bool, "bool"):
            kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif ftype in (int, "int"):
            number = parse_float(raw, lineno, key)
            if number != int(number):
                raise ParseError(f"{key} must be an integer, got {raw!r}", lineno)
            kwargs[key] = int(number)
        else:
            kwargs[key] = parse_float(raw, lineno, key)
    missing = [
        name
        for name, f in fields.items()
        if name not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ParseError(f"missing required key {missing[0].replace('_', '-')!r} in {source}")
    return cls(**kwargs)


def collect(text):
    """Parse ``text`` into ``{key: (lineno, raw)}``; repeated keys are errors."""
    out = {}
    for lineno, key, value in parse_lines(text):
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno)
        out[key] = (lineno, value)
    return out
