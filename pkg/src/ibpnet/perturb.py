"""Corrupted test sets and error-vs-noise-level sweeps.

Adversarial corruption shifts each pixel by epsilon in the direction of the
loss gradient sign, computed against the true labels; Gaussian corruption
adds N(0, sigma^2) noise from a per-level RNG stream, so results do not
depend on the order in which levels are evaluated. Sweeps emit one CSV row
per level with the schema `kind,level,error,n,seed`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .network import Network
from .tensor import rng_stream, sign
from .training import error_rate, input_gradient

SWEEP_KINDS = ("adversarial", "gaussian")
CSV_HEADER = "kind,level,error,n,seed"


@dataclass
class NoiseSweep:
    """Error rates of one model over increasing corruption levels."""

    kind: str
    levels: list
    errors: list
    n: int
    seed: int

    def rows(self):
        for level, err in zip(self.levels, self.errors):
            yield f"{self.kind},{level:g},{err:.6f},{self.n},{self.seed}"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in self.rows():
                fh.write(row + "\n")


def adversarial_testset(net: Network, images: np.ndarray, labels: np.ndarray,
                        epsilon: float, clip: bool = False,
                        batch_size: int = 256) -> np.ndarray:
    """x + epsilon * sign(grad_x L) per sample, against the true labels.

    Model weights are read but never modified.
    """
    if epsilon == 0.0:
        return images
    grad = input_gradient(net, images, labels, batch_size=batch_size)
    out = images + epsilon * sign(grad)
    return np.clip(out, 0.0, 1.0) if clip else out


def gaussian_testset(images: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """x + N(0, sigma^2) noise; deterministic per (seed, sigma)."""
    if sigma < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return images
    rng = rng_stream(seed, f"gaussian/{sigma!r}")
    return images + rng.normal(0.0, sigma, size=images.shape)


def sweep(net: Network, images: np.ndarray, labels: np.ndarray, kind: str,
          levels, seed: int, batch_size: int = 256) -> NoiseSweep:
    """Classification error at each corruption level (level 0 required)."""
    levels = [float(v) for v in levels]
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"sweep kind must be one of {SWEEP_KINDS}, got {kind!r}")
    if not levels or levels[0] != 0.0:
        raise ConfigError("sweep levels must start at 0")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"sweep levels must be strictly increasing: {levels}")
    errors = []
    for level in levels:
        if kind == "adversarial":
            corrupted = adversarial_testset(net, images, labels, level,
                                            batch_size=batch_size)
        else:
            corrupted = gaussian_testset(images, level, seed)
        errors.append(error_rate(net, corrupted, labels, batch_size=batch_size))
    return NoiseSweep(kind, levels, errors, images.shape[0], seed)
