import os
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

from dotenv import load_dotenv

from .errors import UsageError

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise RuntimeError(f"Environment variable {name} must be an integer, got {raw!r}")


DRF_SEED = _env_int("DRF_SEED", 0)
DRF_THREADS = _env_int("DRF_THREADS", 1)
DRF_CONFIG = os.getenv("DRF_CONFIG") or None
DRF_FOREST_DIR = os.getenv("DRF_FOREST_DIR", "forests")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

if DRF_THREADS < 1:
    raise RuntimeError("DRF_THREADS must be at least 1")


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse flat ``key = value`` lines. ``#`` starts a comment."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def read_config_file(path) -> Dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"Cannot read config file {p}: {e}")
    return parse_config_text(text, source=str(p))


def merge_settings(
    valid_keys: Iterable[str],
    file_values: Optional[Mapping[str, object]] = None,
    overrides: Optional[Mapping[str, object]] = None,
) -> Dict[str, object]:
    """File values first, then overrides (``None`` overrides are skipped)."""
    valid = sorted(set(valid_keys))
    merged: Dict[str, object] = {}
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if value is None:
                continue
            if key not in valid:
                raise UsageError(f"Unknown config key {key!r}; valid keys: {', '.join(valid)}")
            merged[key] = value
    return merged


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"Expected a boolean, got {value!r}")
