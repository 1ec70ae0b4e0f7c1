# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the effortvae motion VAE.

Sequences are float64 arrays of shape (T, J, 3). Structured results come back
from the core as JSON and are decoded here.
"""
import json

from . import _core
from ._core import (
    ConfigError,
    Error,
    NumericError,
    PreconditionError,
    ajd,
    augment,
    dominant_frequency,
    kl_gaussian,
    normalize,
    synth_dataset,
    windows,
)

__all__ = [
    "ConfigError",
    "Error",
    "Model",
    "NumericError",
    "PreconditionError",
    "ajd",
    "augment",
    "dominant_frequency",
    "kl_gaussian",
    "normalize",
    "synth_dataset",
    "windows",
]


class Model(_core.Model):
    """Encoder, classifier and decoder with a dict-valued config."""

    def __init__(self, config=None, seed=0):
        super().__init__(json.dumps(config) if config else "", seed)

    @property
    def config(self):
        return json.loads(super().config)

    def total_loss(self, labeled, labels, unlabeled, alpha, seed=0):
        return json.loads(super().total_loss(list(labeled), list(labels), list(unlabeled), alpha, seed))
