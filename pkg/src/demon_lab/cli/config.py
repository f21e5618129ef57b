"""INI configuration files.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments. Angles are given in units of pi. Sections and keys::

    [experiment]  preset, name, cycles, initial_populations, enumeration_cap, angle_convention
    [measurement] delta0, delta1
    [calibration] mu_down, mu_up, threshold
    [policy]      kind (ground | excited | constant), order, angle
    [bath]        varphi, phi, alpha, beta
    [sampling]    samples, seed
    [classical]   spec

``angle_convention = doubled`` doubles every angle before it is used as a
Bloch-sphere rotation angle; ``bloch`` (the default) uses it as given.
When ``preset`` names a built-in parameter set, the file's own keys
override the preset values. The readout errors come from ``[calibration]``
when both deltas are absent.
"""

import configparser
import re
from types import MappingProxyType

import numpy as np

from ..channels import (
    constant_policy,
    excited_state_policy,
    make_bath_channel,
    make_readout_povm,
    markov_ground_policy,
    poisson_readout_errors,
)
from ..ensemble import DEFAULT_CAP, ExperimentConfig
from ..errors import ConfigError
from .presets import PRESETS, preset

SCHEMA = {
    "experiment": {"preset": str, "name": str, "cycles": int, "initial_populations": "floats",
                   "enumeration_cap": int, "angle_convention": str},
    "measurement": {"delta0": float, "delta1": float},
    "calibration": {"mu_down": float, "mu_up": float, "threshold": int},
    "policy": {"kind": str, "order": int, "angle": float},
    "bath": {"varphi": float, "phi": float, "alpha": float, "beta": float},
    "sampling": {"samples": int, "seed": int},
    "classical": {"spec": str},
}

DEFAULTS = {
    "experiment": {"name": "", "initial_populations": (0.5, 0.5), "enumeration_cap": DEFAULT_CAP,
                   "angle_convention": "bloch"},
    "policy": {"order": 1},
    "bath": {"beta": 0.0},
    "sampling": {"samples": 0, "seed": 0},
}

_KEY_LINE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")


def _positions(text):
    where, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_LINE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), i)
            continue
        m = _KEY_LINE.match(line)
        if m and section is not None:
            where[(section, m.group(1).strip().lower())] = i
    return where


def _convert(kind, raw):
    if kind == "floats":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind is int:
        f = float(raw)
        if f != int(f):
            raise ValueError(f"{raw!r} is not an integer")
        return int(f)
    return kind(raw.strip())


def parse_settings(text, source="<config>"):
    """Typed ``{section: {key: value}}`` mapping with presets expanded and defaults filled."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}", line=getattr(exc, "lineno", None)) from None
    where = _positions(text)
    given = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=where.get((section, None)))
        for key, raw in parser.items(section):
            line = where.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key in [{section}]", key=key, line=line)
            try:
                value = _convert(SCHEMA[section][key], raw)
            except ValueError as exc:
                raise ConfigError(f"bad value {raw!r}: {exc}", key=key, line=line) from None
            given.setdefault(section, {})[key] = (value, line)

    settings = {s: dict(v) for s, v in DEFAULTS.items()}
    name = given.get("experiment", {}).get("preset", (None, None))
    if name[0] is not None:
        if name[0] not in PRESETS:
            raise ConfigError(f"unknown preset {name[0]!r}", key="preset", line=name[1])
        for s, values in preset(name[0]).items():
            settings.setdefault(s, {}).update(values)
    lines = {}
    for s, values in given.items():
        for key, (value, line) in values.items():
            if key != "preset":
                settings.setdefault(s, {})[key] = value
                lines[(s, key)] = line
    _validate(settings, lines)
    return settings


def _validate(settings, lines):
    def fail(section, key, msg):
        raise ConfigError(msg, key=key, line=lines.get((section, key)))

    exp = settings["experiment"]
    if "cycles" not in exp:
        fail("experiment", "cycles", "number of cycles is required")
    if exp["cycles"] < 1:
        fail("experiment", "cycles", "cycles must be positive")
    if exp["angle_convention"] not in ("bloch", "doubled"):
        fail("experiment", "angle_convention", "angle_convention must be 'bloch' or 'doubled'")
    pops = exp["initial_populations"]
    if len(pops) != 2 or min(pops) < 0 or abs(sum(pops) - 1) > 1e-12:
        fail("experiment", "initial_populations", "initial_populations must be two probabilities summing to 1")
    meas = settings.get("measurement", {})
    if meas:
        for key in ("delta0", "delta1"):
            if key not in meas:
                fail("measurement", key, "both delta0 and delta1 are required")
            if not 0.0 <= meas[key] <= 1.0:
                fail("measurement", key, f"{key} must lie in [0, 1]")
    else:
        cal = settings.get("calibration", {})
        missing = [k for k in ("mu_down", "mu_up", "threshold") if k not in cal]
        if missing:
            fail("measurement", "delta0", "give delta0/delta1 or a complete [calibration] section")
        for key in ("mu_down", "mu_up"):
            if cal[key] < 0:
                fail("calibration", key, "Poisson means must be non-negative")
    pol = settings.get("policy", {})
    if pol.get("kind") not in ("ground", "excited", "constant"):
        fail("policy", "kind", "policy kind must be ground, excited or constant")
    if pol["order"] < 1:
        fail("policy", "order", "policy order must be positive")
    if pol["kind"] == "ground" and pol["order"] != 1:
        fail("policy", "order", "the ground-state policy has order 1")
    if pol["kind"] == "constant" and "angle" not in pol:
        fail("policy", "angle", "a constant policy needs an angle")
    bath = settings.get("bath", {})
    for key in ("varphi", "phi", "alpha"):
        if key not in bath:
            fail("bath", key, f"bath {key} is required")
    if bath["alpha"] < 0:
        fail("bath", "alpha", "alpha must be non-negative")
    samp = settings["sampling"]
    if samp["samples"] < 0:
        fail("sampling", "samples", "samples must be non-negative")
    if samp["seed"] < 0:
        fail("sampling", "seed", "seed must be non-negative")


def build_config(settings):
    """ExperimentConfig described by validated settings."""
    exp, pol, bath = settings["experiment"], settings["policy"], settings["bath"]
    scale = np.pi * (2.0 if exp["angle_convention"] == "doubled" else 1.0)
    meas = settings.get("measurement")
    calibration = {}
    if meas:
        d0, d1 = meas["delta0"], meas["delta1"]
    else:
        cal = settings["calibration"]
        d0, d1 = poisson_readout_errors(cal["mu_down"], cal["mu_up"], cal["threshold"])
        calibration = dict(cal)
    if pol["kind"] == "ground":
        policy = markov_ground_policy()
    elif pol["kind"] == "excited":
        policy = excited_state_policy(pol["order"])
    else:
        policy = constant_policy(pol["angle"] * scale, pol["order"])
    channel = make_bath_channel(bath["varphi"] * scale, bath["phi"] * scale, bath["alpha"], beta=bath["beta"])
    frozen = MappingProxyType({s: MappingProxyType(dict(v)) for s, v in settings.items()})
    return ExperimentConfig(
        np.diag(exp["initial_populations"]).astype(complex), make_readout_povm(d0, d1), exp["cycles"],
        policy=policy, bath=channel, samples=settings["sampling"]["samples"],
        seed=settings["sampling"]["seed"], enumeration_cap=exp["enumeration_cap"],
        calibration=calibration, name=exp["name"], meta=frozen,
    )


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return build_config(parse_settings(text, source=str(path)))


def config_from_preset(name):
    return build_config(parse_settings(f"[experiment]\npreset = {name}\n", source=name))


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(config_or_settings):
    """Canonical INI text; parsing it back gives the same settings."""
    settings = getattr(config_or_settings, "meta", config_or_settings)
    if settings is None:
        raise ConfigError("configuration was not built from settings and cannot be written out")
    out = []
    for section, keys in SCHEMA.items():
        values = settings.get(section)
        if not values:
            continue
        out.append(f"[{section}]")
        out.extend(f"{key} = {_format(values[key])}" for key in keys if key in values)
        out.append("")
    return "\n".join(out)
