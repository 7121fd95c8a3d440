"""Cointegrated VAR estimation with stable boundary noise."""

import json as _json

from ._core import (
    StableParams,
    TransformSet,
    build_transform,
    estimate,
    fit_stable,
    forward_B,
    johansen,
    recover_B,
    sample_stable,
    simulate,
    stable_cf,
)
from ._core import run_command as _run_command

__all__ = [
    "StableParams",
    "TransformSet",
    "build_transform",
    "estimate",
    "fit_stable",
    "forward_B",
    "johansen",
    "recover_B",
    "run_command",
    "sample_stable",
    "simulate",
    "stable_cf",
]


def run_command(command, config, out, threads=1, inputs=()):
    """Run a harness command from config text; returns the report as a dict."""
    return _json.loads(_run_command(command, config, str(out), threads, [str(p) for p in inputs]))
