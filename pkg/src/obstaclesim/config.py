"""Flat sectioned key=value configs, shipped presets, and config hashing.

A config file is INI-style text with the sections [scenario], [mesh], [time],
[coefficients], [obstacle], [noise], [penalty], [init], [output], [seeds].
Every key maps to one ScenarioConfig field; unknown sections or keys are
rejected with the offending name.  `preset = <name>` in [scenario] expands a
shipped preset first; explicit keys then override it key by key.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import replace

from .solver import ScenarioConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_opt_float(s: str):
    v = s.strip().lower()
    if v in ("", "none", "auto"):
        return None
    return float(s)


def _parse_times(s: str) -> tuple:
    v = s.strip()
    if not v:
        return ()
    return tuple(float(tok) for tok in v.replace(",", " ").split())


# (section, key) -> (ScenarioConfig field, parser)
_SCHEMA = {
    ("mesh", "n"): ("n", int),
    ("mesh", "xi_bins"): ("xi_bins", int),
    ("mesh", "xi_max"): ("xi_max", _parse_opt_float),
    ("time", "t_final"): ("T", float),
    ("time", "cfl"): ("cfl", float),
    ("time", "dt_fixed"): ("dt_fixed", _parse_opt_float),
    ("coefficients", "m"): ("m", float),
    ("coefficients", "sigma_kind"): ("sigma_kind", str),
    ("coefficients", "sigma_scale"): ("sigma_scale", float),
    ("coefficients", "sigma_power"): ("sigma_power", _parse_opt_float),
    ("coefficients", "g_kind"): ("g_kind", str),
    ("coefficients", "g_coeff"): ("g_coeff", float),
    ("coefficients", "delta_reg"): ("delta_reg", float),
    ("coefficients", "p"): ("p", float),
    ("obstacle", "kind"): ("obstacle_kind", str),
    ("obstacle", "base"): ("obstacle_base", float),
    ("obstacle", "amplitude"): ("obstacle_amplitude", float),
    ("obstacle", "wavenumber"): ("obstacle_wavenumber", int),
    ("obstacle", "speed"): ("obstacle_speed", float),
    ("obstacle", "rate"): ("obstacle_rate", float),
    ("obstacle", "side"): ("side", str),
    ("noise", "modes"): ("modes", int),
    ("noise", "amplitude"): ("noise_amplitude", float),
    ("noise", "amplitude_decay"): ("amplitude_decay", float),
    ("noise", "pairing"): ("pairing", str),
    ("penalty", "epsilon"): ("epsilon", float),
    ("penalty", "alpha"): ("alpha", float),
    ("init", "kind"): ("init_kind", str),
    ("init", "base"): ("init_base", float),
    ("init", "amplitude"): ("init_amplitude", float),
    ("init", "wavenumber"): ("init_wavenumber", int),
    ("init", "allow_above_obstacle"): ("allow_init_above_obstacle", _parse_bool),
    ("output", "record_every"): ("record_every", float),
    ("output", "t_bins"): ("t_bins", int),
    ("output", "snapshot_times"): ("snapshot_times", _parse_times),
    ("seeds", "master_seed"): ("master_seed", int),
    ("seeds", "path_id"): ("path_id", int),
}

_SECTIONS = {"scenario"} | {sec for sec, _ in _SCHEMA}


# ---------------------------------------------------------------------------
# Shipped presets

PRESETS = {
    "pm-contact": (
        "porous medium (m=2), sqrt-Phi noise with 2 homogeneous pairs, "
        "obstacle ramping down into the solution",
        dict(n=256, xi_bins=64, T=1.0, cfl=0.35,
             m=2.0, sigma_kind="sqrt_phi", alpha=0.1, epsilon=0.05,
             obstacle_kind="time_ramp", obstacle_base=0.75, obstacle_rate=-0.73,
             modes=4, noise_amplitude=0.25, amplitude_decay=1.0,
             pairing="homogeneous",
             init_kind="cosine", init_base=0.45, init_amplitude=0.3,
             init_wavenumber=1),
    ),
    "heat-contact": (
        "deterministic heat flow (m=1, no noise) against a falling obstacle",
        dict(n=256, xi_bins=64, T=1.0, cfl=0.35,
             m=1.0, sigma_kind="zero", alpha=0.0, epsilon=0.05,
             obstacle_kind="time_ramp", obstacle_base=0.8, obstacle_rate=-0.4,
             modes=0, noise_amplitude=0.0,
             init_kind="cosine", init_base=0.55, init_amplitude=0.2,
             init_wavenumber=1),
    ),
    "fast-diffusion": (
        "fast diffusion (m=1/2) with mild sqrt-Phi noise and an obstacle "
        "ramping down into the solution",
        dict(n=256, xi_bins=64, T=1.0, cfl=0.35,
             m=0.5, sigma_kind="sqrt_phi", alpha=0.1, epsilon=0.05,
             delta_reg=1e-3,
             obstacle_kind="time_ramp", obstacle_base=1.0, obstacle_rate=-0.5,
             modes=4, noise_amplitude=0.05, amplitude_decay=1.0,
             pairing="homogeneous",
             init_kind="cosine", init_base=0.8, init_amplitude=0.1,
             init_wavenumber=1),
    ),
    "ode-contact": (
        "spatially constant state relaxing onto a constant obstacle: exact "
        "scalar-ODE benchmark for the penalty layer",
        dict(n=16, xi_bins=32, T=0.2, dt_fixed=5e-5, record_every=5e-4,
             m=1.0, sigma_kind="zero", alpha=0.0, epsilon=0.01,
             obstacle_kind="constant", obstacle_base=0.3,
             modes=0, noise_amplitude=0.0,
             init_kind="constant", init_base=0.5,
             allow_init_above_obstacle=True),
    ),
}


def list_presets():
    """name -> one-line description, in a stable order."""
    return {name: desc for name, (desc, _) in PRESETS.items()}


def preset_config(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    _, fields = PRESETS[name]
    return replace(ScenarioConfig(**fields), **overrides)


# ---------------------------------------------------------------------------
# Parsing

def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    fields = {}
    preset = None
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            raw = raw.strip().strip('"').strip("'")
            if sec == "scenario":
                if key != "preset":
                    raise ConfigError(f"unknown key [scenario].{key}")
                preset = raw
                continue
            if (sec, key) not in _SCHEMA:
                raise ConfigError(f"unknown key [{sec}].{key}")
            field, parser = _SCHEMA[(sec, key)]
            try:
                fields[field] = parser(raw)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for [{sec}].{key}: {raw!r} "
                                  f"({exc})") from exc

    if preset is not None:
        cfg = preset_config(preset, **fields)
    else:
        cfg = ScenarioConfig(**fields)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


# ---------------------------------------------------------------------------
# Serialization and hashing

def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical text form; parse_config(serialize_config(c)) == c."""
    out = io.StringIO()
    by_section = {}
    for (sec, key), (field, _) in _SCHEMA.items():
        by_section.setdefault(sec, []).append((key, field))
    for sec in ("mesh", "time", "coefficients", "obstacle", "noise",
                "penalty", "init", "output", "seeds"):
        out.write(f"[{sec}]\n")
        for key, field in by_section[sec]:
            val = getattr(cfg, field)
            if val is None:
                val = "none"
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, tuple):
                val = " ".join(repr(float(v)) for v in val)
            elif isinstance(val, float):
                val = repr(val)
            out.write(f"{key} = {val}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: ScenarioConfig) -> str:
    """Short stable digest of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:12]
