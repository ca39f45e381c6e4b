"""Flat key=value config files.

One file can drive a whole pipeline: keys are namespaced by command area
(``data.``, ``net.``, ``train.``, ``sweep.``, ``classify.``, ``bench.``,
``delta.``) plus the bare ``seed``. Each command consumes its own prefixes,
validates field names and values against its defaults, and ignores the other
areas. '#' starts a comment.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple


class ConfigError(Exception):
    """Unparseable config file, unknown key, or bad value."""


KNOWN_PREFIXES = ("data.", "net.", "train.", "sweep.", "classify.", "bench.", "delta.")
BARE_KEYS = ("seed",)


def read_config(path) -> Dict[str, str]:
    """Parse a key=value file into a flat string dict."""
    raw: Dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key not in BARE_KEYS and not key.startswith(KNOWN_PREFIXES):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _coerce(key: str, text: str, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if not text:
                return ()
            elem = default[0] if default else 0.0
            if isinstance(elem, tuple):
                return parse_beta_pairs(text)
            conv = int if isinstance(elem, int) and not isinstance(elem, bool) else float
            return tuple(conv(part.strip()) for part in text.split(","))
        return text
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def take(raw: Dict[str, str], prefix: str, defaults: Dict) -> Dict:
    """Typed values for one namespace: defaults overridden by config entries."""
    out = dict(defaults)
    for key, text in raw.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in defaults:
            raise ConfigError(f"unknown key {key!r} (known: "
                              f"{', '.join(prefix + k for k in sorted(defaults))})")
        out[name] = _coerce(key, text, defaults[name])
    return out


def parse_beta_pairs(text: str) -> Tuple[Tuple[float, float], ...]:
    """Parse "0.5:0.92,0:1" into ((0.5, 0.92), (0.0, 1.0)); enforces b1 < b2."""
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ConfigError(f"beta pair must be b1:b2, got {chunk!r}")
        b1, b2 = float(parts[0]), float(parts[1])
        if not (0.0 <= b1 < b2 <= 1.0):
            raise ConfigError(f"need 0 <= beta1 < beta2 <= 1, got {chunk!r}")
        pairs.append((b1, b2))
    if not pairs:
        raise ConfigError("no beta pairs given")
    return tuple(pairs)


def root_seed(raw: Dict[str, str], cli_seed: Optional[int]) -> int:
    """CLI --seed wins over the config's bare seed key; default 0."""
    if cli_seed is not None:
        return cli_seed
    if "seed" in raw:
        try:
            return int(raw["seed"])
        except ValueError:
            raise ConfigError(f"bad value for seed: {raw['seed']!r}") from None
    return 0
