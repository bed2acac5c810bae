"""Noise schedules, renoising, and reproducible RNG streams.

``alpha_bar[t]`` is the cumulative signal retention at absolute step t:
``alpha_bar[0] == 1`` (clean) and ``alpha_bar[T]`` is near zero (pure
noise).  Renoising a buffer to level t draws
``sqrt(alpha_bar[t]) * x + sqrt(1 - alpha_bar[t]) * eps``.

RNG streams are derived hierarchically from a root seed so that the
noise drawn for (step, window) never depends on iteration order or
worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["NoiseSchedule", "SeededRng", "make_linear_schedule", "renoise"]

_BIT_GENERATORS = {
    "philox": np.random.Philox,
    "pcg64": np.random.PCG64,
}


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone cumulative signal-retention coefficients, length T+1."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2:
            raise ValueError("alpha_bar must be a 1-D sequence of length T+1 >= 2")
        if ab[0] != 1.0:
            raise ValueError(f"alpha_bar[0] must be exactly 1, got {ab[0]}")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ValueError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return self.alpha_bar.size - 1

    def to_text(self) -> str:
        """One alpha_bar value per line, full precision."""
        return "\n".join(repr(float(a)) for a in self.alpha_bar) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseSchedule":
        values = [float(line) for line in text.split() if line.strip()]
        return cls(np.asarray(values))


def make_linear_schedule(steps: int, beta_min: float = 1e-4,
                         beta_max: float = 0.02) -> NoiseSchedule:
    """Standard linear-beta construction: alpha_bar[t] = prod_{s<=t}(1 - beta_s)."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, steps, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(alpha_bar)


@dataclass(frozen=True)
class SeededRng:
    """Root seed plus a fork path; equal (seed, algorithm, path) means an
    identical stream on every platform."""

    seed: int
    algorithm: str = "philox"
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.algorithm not in _BIT_GENERATORS:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}; "
                             f"choose from {sorted(_BIT_GENERATORS)}")

    def fork(self, *key: int) -> "SeededRng":
        """Child stream for a task, e.g. rng.fork(step, window_index)."""
        return SeededRng(self.seed, self.algorithm, self.path + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(_BIT_GENERATORS[self.algorithm](ss))

    def standard_normal(self, shape, dtype=np.float32) -> np.ndarray:
        return self.generator().standard_normal(shape, dtype=dtype)


def renoise(buf: np.ndarray, schedule: NoiseSchedule, t: int, rng: SeededRng) -> np.ndarray:
    """Mix `buf` with fresh standard-normal noise to noise level t.

    t = 0 returns the input unchanged; t = T is (almost) pure noise.
    """
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"step {t} outside schedule range [0, {schedule.steps}]")
    ab = float(schedule.alpha_bar[t])
    buf = np.asarray(buf, dtype=np.float32)
    eps = rng.standard_normal(buf.shape, dtype=np.float32)
    return np.float32(math.sqrt(ab)) * buf + np.float32(math.sqrt(1.0 - ab)) * eps
