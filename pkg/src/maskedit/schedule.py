"""Noise schedule: the cumulative signal-retention sequence driving the
forward corruption and the deterministic reverse steps.

``alpha_bar[t]`` is the product of (1 - beta_s) for s <= t, with
``alpha_bar[0] == 1``. Betas are linearly spaced, the convention of the
model family this targets. Invariants (strictly decreasing, positive,
finite) are enforced by :func:`make_schedule`; tests may construct the
dataclass directly to probe limit cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class NoiseSchedule:
    total_steps: int
    alpha_bar: np.ndarray  # length total_steps + 1, alpha_bar[0] == 1
    beta_min: float = float("nan")
    beta_max: float = float("nan")

    def validate(self) -> None:
        ab = self.alpha_bar
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")
        if ab.shape != (self.total_steps + 1,):
            raise ConfigurationError("alpha_bar must have length total_steps + 1")
        if ab[0] != 1.0:
            raise ConfigurationError("alpha_bar[0] must be 1")
        if not np.all(np.isfinite(ab)) or np.any(ab <= 0):
            raise ConfigurationError("alpha_bar entries must be finite and > 0")
        if np.any(np.diff(ab) >= 0):
            raise ConfigurationError("alpha_bar must be strictly decreasing")

    def to_dict(self) -> dict:
        return {"T": self.total_steps, "beta_min": self.beta_min,
                "beta_max": self.beta_max}


def make_schedule(total_steps: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Build a linear-beta schedule and check every invariant.

    Raises ConfigurationError unless total_steps >= 1 and
    0 < beta_min <= beta_max < 1.
    """
    if not isinstance(total_steps, (int, np.integer)) or total_steps < 1:
        raise ConfigurationError(f"total_steps must be a positive integer, got {total_steps!r}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )
    betas = np.linspace(beta_min, beta_max, total_steps)
    alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    alpha_bar.setflags(write=False)
    sched = NoiseSchedule(int(total_steps), alpha_bar, float(beta_min), float(beta_max))
    sched.validate()
    return sched


def schedule_from_dict(d: dict) -> NoiseSchedule:
    return make_schedule(int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))
