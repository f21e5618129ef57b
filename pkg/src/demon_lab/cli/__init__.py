"""Configuration files, figure presets and the ``demon-lab`` command."""

from .config import build_config, config_from_preset, emit, load_config, parse_settings
from .output import RunManifest
from .presets import PRESETS, classical_specs

__all__ = ["PRESETS", "RunManifest", "build_config", "classical_specs", "config_from_preset", "emit",
           "load_config", "parse_settings"]
