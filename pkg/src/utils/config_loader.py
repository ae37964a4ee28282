"""
Experiment profile loading.

A configuration file maps profile names to profiles; each profile carries
``"version": 1`` and the sections data / train / search / models / output.
A file whose top level is itself a profile (it has a ``version`` key) is
accepted directly.
"""

import json
import logging
import os
from typing import List, Optional

from core.errors import ConfigError, SchemaMismatchError
from core.schema import validate_document

logger = logging.getLogger(__name__)

SUPPORTED_VERSION = 1
DEFAULT_CONFIG_FILE = os.path.join(
    os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
    "config",
    "experiments.json",
)


def _read(config_file: str) -> dict:
    if not os.path.exists(config_file):
        raise FileNotFoundError(f"Configuration file not found: {config_file}")
    with open(config_file, "r") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_file} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"{config_file} must contain a JSON object")
    return document


def check_profile(profile: dict, label: str = "profile") -> dict:
    """Reject unsupported versions and sections, then return the profile."""
    version = profile.get("version") if isinstance(profile, dict) else None
    if version != SUPPORTED_VERSION:
        raise ConfigError(f"{label}: unsupported config version {version!r} (expected {SUPPORTED_VERSION})")
    try:
        validate_document(profile, "experiment_config.json")
    except SchemaMismatchError as e:
        raise ConfigError(f"{label}: {e}") from e
    return profile


def load_config(config_file: str = DEFAULT_CONFIG_FILE, config_name: Optional[str] = None) -> dict:
    """
    Load one experiment profile from a JSON config file.

    Args:
        config_file: Path to JSON config file
        config_name: Profile to load (e.g. 'blackbody_default'); ignored for a
            single-profile file

    Returns:
        Profile dictionary
    """
    configs = _read(config_file)
    if "version" in configs:
        logger.debug("%s is a single profile", config_file)
        return check_profile(configs, config_file)

    if config_name not in configs:
        available = list(configs.keys())
        raise ConfigError(f"Configuration '{config_name}' not found. Available: {available}")

    return check_profile(configs[config_name], config_name)


def get_available_configs(config_file: str = DEFAULT_CONFIG_FILE) -> List[str]:
    """Get list of available profile names."""
    if not os.path.exists(config_file):
        return []
    configs = _read(config_file)
    if "version" in configs:
        return []
    return list(configs.keys())
