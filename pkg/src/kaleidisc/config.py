"""Flat ``key = value`` configuration files for the attack loop.

Lines starting with ``#`` are comments. Unknown keys are rejected by name;
every key has a default so an empty file yields the default configuration.
"""

from .attack import AttackConfig
from .errors import InvalidConfigError

_INT_KEYS = {"iterations", "clip_cadence", "segments", "segment_height",
             "spsa_samples", "seed"}
_FLOAT_KEYS = {"alpha", "ink_limit", "pitch_min", "pitch_max", "yaw_min",
               "yaw_max", "dist_min", "dist_max", "disc_radius_m"}
_STR_KEYS = {"victim"}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def parse_kv_lines(text):
    pairs = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidConfigError(f"line {ln}: empty key")
        if key in pairs:
            raise InvalidConfigError(f"line {ln}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def parse_config(text):
    """Parse attack configuration text into an AttackConfig."""
    pairs = parse_kv_lines(text)
    values = {}
    for key, raw in pairs.items():
        if key not in KNOWN_KEYS:
            raise InvalidConfigError(f"unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _FLOAT_KEYS:
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError as exc:
            raise InvalidConfigError(f"key {key!r}: {exc}") from exc

    defaults = AttackConfig()

    def rng(lo_key, hi_key, default):
        lo = values.pop(lo_key, default[0])
        hi = values.pop(hi_key, default[1])
        return (lo, hi)

    pitch = rng("pitch_min", "pitch_max", defaults.pitch)
    yaw = rng("yaw_min", "yaw_max", defaults.yaw)
    dist = rng("dist_min", "dist_max", defaults.dist)
    try:
        return AttackConfig(pitch=pitch, yaw=yaw, dist=dist, **values)
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from exc
