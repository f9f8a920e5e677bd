"""Price CSV ingestion, key=value configuration files and JSON reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import typing
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, DataError
from .hurst import EstimationConfig
from .simulate import ModelParams
from .stats import PriceSeries

GRID_TOL = 1e-6
# config files may spell the block exponent in full
_ALIASES = {"lambda": "lam"}


def ingest_csv(path: str | Path, label: str | None = None) -> PriceSeries:
    """Read a uniformly sampled price file.

    The first column holds timestamps. Prices are taken from a column named
    ``price`` (converted to log) or, failing that, a column named ``x``
    (already log prices, as written by the simulator); otherwise the second
    column is read as prices. Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [c.strip().lower() for c in rows[0]]
    try:
        [float(c) for c in header]
    except ValueError:
        pass
    else:
        raise DataError(f"{path}: a header row is required")
    if len(header) < 2:
        raise DataError(f"{path}: need a timestamp and a price column")
    if "price" in header:
        col, is_log = header.index("price"), False
    elif "x" in header:
        col, is_log = header.index("x"), True
    else:
        col, is_log = 1, False
    data = rows[1:]
    if len(data) < 2:
        raise DataError(f"{path}: need at least 2 data rows, found {len(data)}")
    t = np.empty(len(data))
    p = np.empty(len(data))
    for i, r in enumerate(data, start=1):
        try:
            t[i - 1] = float(r[0])
            p[i - 1] = float(r[col])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}: malformed row {i}: {','.join(r)!r}") from exc
        if not (math.isfinite(t[i - 1]) and math.isfinite(p[i - 1])):
            raise DataError(f"{path}: non-finite value at row {i}")
        if not is_log and p[i - 1] <= 0:
            raise DataError(f"{path}: non-positive price {p[i - 1]} at row {i}")
    dt = np.diff(t)
    delta = float(np.median(dt))
    if not delta > 0:
        raise DataError(f"{path}: timestamps must increase")
    bad = np.flatnonzero(np.abs(dt - delta) > GRID_TOL * delta)
    if bad.size:
        row = int(bad[0]) + 2
        raise DataError(f"{path}: non-uniform grid at row {row} (spacing {dt[bad[0]]:g}, expected {delta:g})")
    x = p if is_log else np.log(p)
    return PriceSeries(x, delta, label if label is not None else path.stem)


# ---------------------------------------------------------------------------
# key=value configuration


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_kv(text, str(path))


def _coerce(raw: str, hint: Any, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if type(None) in args:
            if raw == "" or raw.lower() == "none":
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _coerce(raw, inner, key)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if origin is tuple and args and typing.get_origin(args[0]) is tuple:
            return tuple(tuple(float(v) for v in row.split(",")) for row in raw.split(";"))
        if origin is tuple:
            return tuple(float(v) for v in raw.split(","))
        if hint is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigError(f"unsupported type for {key}")


def _build(cls, values: dict[str, str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kw = {k: _coerce(v, hints[k], k) for k, v in values.items()}
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def config_from_kv(values: dict[str, str]) -> EstimationConfig:
    return _build(EstimationConfig, values)


def model_from_kv(values: dict[str, str]) -> ModelParams:
    return _build(ModelParams, values)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return ";".join(format_value(r) for r in v)
    if isinstance(v, tuple):
        return ",".join(format_value(float(x)) for x in v)
    return str(v)


def format_kv(obj) -> str:
    """Serialize a config dataclass so that :func:`parse_kv` round-trips it."""
    return "".join(f"{f.name}={format_value(getattr(obj, f.name))}\n" for f in dataclasses.fields(obj))


# ---------------------------------------------------------------------------
# JSON with fixed float precision


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return format(f, ".17g") if math.isfinite(f) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(str(k), indent, level + 1)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits; NaN and
    infinities become null."""
    return _encode(obj, indent, 0) + "\n"


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(dumps(obj))
