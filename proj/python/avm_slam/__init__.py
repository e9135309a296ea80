"""Python bindings for the AVM semantic SLAM core."""

import json
from pathlib import Path

from . import _core
from ._core import (
    ConfigError,
    DomainError,
    Error,
    FisheyeModel,
    InitStarvationError,
    InputError,
    OutOfFieldError,
    Pose2,
    SchemaError,
    between,
    bev_pixel_to_vehicle,
    distance_error_metrics,
    wrap_angle,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "FisheyeModel",
    "InitStarvationError",
    "InputError",
    "OutOfFieldError",
    "Pose2",
    "SchemaError",
    "between",
    "bev_pixel_to_vehicle",
    "default_config",
    "normalize_config",
    "distance_error_metrics",
    "evaluate",
    "run",
    "simulate",
    "wrap_angle",
]


def _config_text(config):
    if config is None:
        return "{}"
    if isinstance(config, (str, bytes)):
        return config
    return json.dumps(config)


def default_config():
    """Full default configuration as a dict."""
    return json.loads(_core.default_config())


def normalize_config(config=None):
    """Validated configuration with every default filled in."""
    return json.loads(_core.normalize_config(_config_text(config)))


def simulate(out_dir, config=None):
    """Simulate a dataset into out_dir; returns the number of frames."""
    return _core.simulate(_config_text(config), str(Path(out_dir)))


def run(dataset_dir, config=None, out_dir=None):
    """Run SLAM on a dataset directory.

    Trajectories come back as (N, 4) arrays of t, x, y, yaw. With out_dir the
    run files are written as well.
    """
    return _core.run(_config_text(config), str(dataset_dir), "" if out_dir is None else str(out_dir))


def evaluate(run_dir, dataset_dir, landmarks=()):
    """Evaluation report of a run directory as a dict."""
    return json.loads(_core.evaluate(str(run_dir), str(dataset_dir), list(landmarks)))
