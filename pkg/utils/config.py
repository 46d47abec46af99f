#!/usr/bin/env python3
"""
Configuration Utilities

This module loads YAML/JSON configuration files and applies environment
overrides read through python-dotenv.
"""

import os
import logging
import dataclasses

import yaml
from dotenv import load_dotenv

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_SEED = 'SEED'
ENV_THREADS = 'STREETSPLAT_THREADS'
ENV_LOG_LEVEL = 'STREETSPLAT_LOG_LEVEL'


def load_environment(dotenv_path=None):
    """
    Load a .env file into the process environment without overriding
    variables that are already set.

    Args:
        dotenv_path (str, optional): Explicit .env path; searched upward when omitted
    """
    loaded = load_dotenv(dotenv_path=dotenv_path, override=False)
    if loaded:
        logger.debug("Environment loaded from .env")


def load_config_file(path):
    """
    Load a YAML (or JSON) configuration document.

    Args:
        path (str): Path to the configuration file

    Returns:
        dict: Parsed configuration (empty dict for an empty file)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Configuration file not found: {path}")
    try:
        with open(path, 'r') as file:
            config = yaml.safe_load(file)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: cannot parse configuration: {e}") from e
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    logger.info(f"Configuration loaded from {path}")
    return config


def seed_override(default):
    """Return the SEED environment variable as an int, or ``default``."""
    value = os.environ.get(ENV_SEED)
    if value is None or value == '':
        return default
    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"{ENV_SEED} must be an integer, got {value!r}") from e


def default_threads():
    """Render thread count from the environment (default 1)."""
    value = os.environ.get(ENV_THREADS, '1')
    try:
        threads = int(value)
    except ValueError as e:
        raise ConfigError(f"{ENV_THREADS} must be an integer, got {value!r}") from e
    if threads < 1:
        raise ConfigError(f"{ENV_THREADS} must be >= 1")
    return threads


def dataclass_from_dict(cls, data, section):
    """
    Build a dataclass from a config mapping, rejecting unknown keys.

    Nested dataclass fields are built recursively when the value is a mapping.

    Args:
        cls (type): Dataclass type
        data (dict): Mapping of field values (missing keys keep defaults)
        section (str): Section name used in error messages

    Returns:
        object: Instance of ``cls``
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        nested = _nested_dataclass(cls, fields[name])
        if nested is not None and isinstance(value, dict):
            value = dataclass_from_dict(nested, value, f"{section}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


def _nested_dataclass(cls, field):
    default_factory = field.default_factory
    if default_factory is not dataclasses.MISSING and dataclasses.is_dataclass(default_factory):
        return default_factory
    return None
