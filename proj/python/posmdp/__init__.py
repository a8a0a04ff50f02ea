"""Belief-space macro-actions and policy search for multi-robot teams.

Policies and configs cross into the extension as JSON text; the helpers below
accept and return plain Python objects instead.
"""

import json as _json

from ._core import (
    ConfigError,
    Domain,
    Error,
    GoalUnreachable,
    InitiationViolated,
    NoValidSuccessor,
    Tma,
    load_domain,
    load_tma,
    run_command,
    stationary_covariance,
    success_curve,
)
from ._core import build_tma as _build_tma
from ._core import load_domain_json as _load_domain_json

__all__ = [
    "ConfigError",
    "Domain",
    "Error",
    "GoalUnreachable",
    "InitiationViolated",
    "NoValidSuccessor",
    "Tma",
    "build_tma",
    "domain_from_dict",
    "load_domain",
    "load_tma",
    "run_command",
    "stationary_covariance",
    "success_curve",
]


def build_tma(config):
    """Construct a TMA from a config dict (or JSON string)."""
    return _build_tma(config if isinstance(config, str) else _json.dumps(config))


def domain_from_dict(config, base_dir=""):
    return _load_domain_json(_json.dumps(config), base_dir)
