"""gm.toml loading.

The file carries operator defaults only; every key maps onto an existing
flag or PipelineConfig field, and unknown keys are rejected so a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .errors import ConfigError
from .pipeline import PipelineConfig

_PIPELINE_KEYS = {
    "previous_frames": int,
    "min_instance_area": int,
    "roi_top_fraction": float,
    "roi_bottom_fraction": float,
    "roi_left_fraction": float,
    "roi_right_fraction": float,
    "min_run_fraction": float,
    "depth_radius_px": float,
}

_SERVER_KEYS = {
    "url": str,
    "user": str,
    "secret": str,
    "workspace": str,
    "listen": str,
}


@dataclass(frozen=True)
class ServerDefaults:
    url: Optional[str] = None
    user: str = "mapper"
    secret: str = "mapper"
    workspace: str = "default"
    listen: str = "127.0.0.1:8000"


@dataclass(frozen=True)
class AppConfig:
    pipeline: PipelineConfig = PipelineConfig()
    server: ServerDefaults = ServerDefaults()


def load_config(path: Union[str, Path]) -> AppConfig:
    """Parse a gm.toml file; missing keys keep their built-in defaults."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    unknown_tables = set(raw) - {"pipeline", "server"}
    if unknown_tables:
        raise ConfigError(f"{path}: unknown table {sorted(unknown_tables)[0]!r}")

    pipeline = _coerce(path, "pipeline", raw.get("pipeline", {}), _PIPELINE_KEYS)
    server = _coerce(path, "server", raw.get("server", {}), _SERVER_KEYS)
    try:
        return AppConfig(
            pipeline=dataclasses.replace(PipelineConfig(), **pipeline),
            server=dataclasses.replace(ServerDefaults(), **server),
        )
    except ValueError as exc:
        # PipelineConfig validates its own ranges; a rejected value is
        # still a file problem from the caller's point of view.
        raise ConfigError(f"{path}: {exc}") from exc


def maybe_load_config(path: Union[str, Path, None]) -> AppConfig:
    """Explicit path, else ./gm.toml when present, else defaults."""
    if path is not None:
        return load_config(path)
    default = Path("gm.toml")
    if default.is_file():
        return load_config(default)
    return AppConfig()


def _coerce(path: Path, table: str, values: dict, schema: dict) -> dict:
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: [{table}] must be a table")
    out = {}
    for key, value in values.items():
        if key not in schema:
            raise ConfigError(f"{path}: unknown key {table}.{key}")
        want = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or isinstance(value, bool):
            raise ConfigError(
                f"{path}: {table}.{key} must be {want.__name__}, "
                f"got {type(value).__name__}"
            )
        out[key] = value
    return out
