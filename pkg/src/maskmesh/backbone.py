"""The fixed random backbone network shared by every agent in a collective.

Weights take only the values +/- sqrt(2 / fan_in) (signed Kaiming constant),
with signs drawn from a deterministic stream, so two backbones built from the
same seed and dims are bit-identical on any machine. The backbone is never
trained; per-task binary masks select which weights participate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from maskmesh import rng
from maskmesh.errors import ConfigurationError


@dataclass(frozen=True)
class Backbone:
    """Immutable stack of weight matrices, one per layer, shaped (fan_out, fan_in)."""

    layers: tuple[np.ndarray, ...]
    layer_dims: tuple[tuple[int, int], ...]  # (fan_in, fan_out) per layer
    seed: int

    def fingerprint(self) -> str:
        """SHA-256 over all weight bytes; used to assert the backbone never mutates."""
        h = hashlib.sha256()
        for w in self.layers:
            h.update(w.tobytes())
        return h.hexdigest()


def init_backbone(seed: int, layer_dims: list[tuple[int, int]]) -> Backbone:
    """Build the fixed backbone for `layer_dims` = [(fan_in, fan_out), ...].

    Each weight is sigma_l * sign with sigma_l = sqrt(2 / fan_in) and signs
    drawn from the backbone stream of `seed`.
    """
    if not layer_dims:
        raise ConfigurationError("layer_dims must be nonempty")
    for fan_in, fan_out in layer_dims:
        if fan_in < 1 or fan_out < 1:
            raise ConfigurationError(f"invalid layer dims ({fan_in}, {fan_out})")

    gen = rng.stream(seed, rng.BACKBONE)
    layers = []
    for fan_in, fan_out in layer_dims:
        sigma = np.sqrt(2.0 / fan_in)
        signs = gen.integers(0, 2, size=(fan_out, fan_in)).astype(np.float64) * 2.0 - 1.0
        w = signs * sigma
        w.flags.writeable = False
        layers.append(w)
    return Backbone(layers=tuple(layers), layer_dims=tuple(tuple(d) for d in layer_dims), seed=seed)
