"""Forward corruption, deterministic reverse steps, the guided sampling
loop, and the noise-prediction training objective.

Latents are float64 arrays of shape (channels, height, width). The
denoiser is any object satisfying :class:`Denoiser`; the sampling loop is
shared by the plain model, the dual-branch inpainter and the latent-blend
baseline (which plugs in through the per-step hook).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, ModelError, OrderingError, ShapeError
from .schedule import NoiseSchedule, make_schedule

StepHook = Callable[[np.ndarray, int, int], Optional[np.ndarray]]


class Denoiser(Protocol):
    """Noise predictor contract used by the sampler and the trainer."""

    def predict(self, z_t: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        """Estimate the noise component of ``z_t`` at timestep ``t``."""
        ...

    def layer_features(self, z_t: np.ndarray, t: int, cond: np.ndarray) -> list[np.ndarray]:
        """Ordered per-layer feature maps for one evaluation."""
        ...


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise ConfigurationError("guidance_scale must be >= 0")

    def to_dict(self) -> dict:
        return {"steps": self.steps, "guidance_scale": self.guidance_scale,
                "seed": self.seed}


def config_to_json(sched: NoiseSchedule, cfg: SamplerConfig) -> str:
    """Serialize schedule + sampler settings as one JSON config block."""
    block = dict(sched.to_dict())
    block.update(cfg.to_dict())
    return json.dumps(block, sort_keys=True)


def config_from_json(text: str) -> tuple[NoiseSchedule, SamplerConfig]:
    d = json.loads(text)
    sched = make_schedule(int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))
    cfg = SamplerConfig(steps=int(d["steps"]),
                        guidance_scale=float(d["guidance_scale"]),
                        seed=int(d["seed"]))
    return sched, cfg


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 0 <= t <= sched.total_steps:
        raise ConfigurationError(f"timestep {t} outside [0, {sched.total_steps}]")


def forward_noise(z0: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Corrupt a clean latent to timestep t: sqrt(ab)*z0 + sqrt(1-ab)*eps."""
    if z0.shape != eps.shape:
        raise ShapeError(f"z0 {z0.shape} vs eps {eps.shape}")
    _check_t(t, sched)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              sched: NoiseSchedule) -> np.ndarray:
    """One deterministic reverse step from t to t_prev (< t)."""
    if z_t.shape != eps_hat.shape:
        raise ShapeError(f"z_t {z_t.shape} vs eps_hat {eps_hat.shape}")
    if t_prev >= t:
        raise OrderingError(f"t_prev={t_prev} must be < t={t}")
    _check_t(t, sched)
    _check_t(t_prev, sched)
    a_t = sched.alpha_bar[t]
    a_p = sched.alpha_bar[t_prev]
    scale = np.sqrt(a_p) / np.sqrt(a_t)
    shift = np.sqrt(a_p) * (np.sqrt(1.0 / a_p - 1.0) - np.sqrt(1.0 / a_t - 1.0))
    return scale * z_t + shift * eps_hat


def sampling_timesteps(total_steps: int, steps: int) -> list[int]:
    """``steps`` evenly spaced integer timesteps from T down to 0, inclusive.

    Integer arithmetic keeps the sequence strictly decreasing whenever
    steps <= T.
    """
    if steps > total_steps:
        raise ConfigurationError(f"steps={steps} exceeds schedule length {total_steps}")
    return [(total_steps * k) // steps for k in range(steps, -1, -1)]


def sample(denoiser: Denoiser, z_start: np.ndarray, cond: np.ndarray,
           sched: NoiseSchedule, cfg: SamplerConfig, *,
           uncond: np.ndarray | None = None,
           hook: StepHook | None = None) -> np.ndarray:
    """Run the guided reverse loop from pure noise to a clean latent.

    Per step both the conditional and unconditional predictions are
    evaluated and combined as eu + s*(ec - eu); s=1 and s=0 short-circuit
    to the conditional / unconditional branch exactly. ``uncond`` defaults
    to the zero vector, which is the empty-caption embedding under the
    default embedder. ``hook(z, t, t_prev)`` runs after each reverse step
    and may return a replacement latent (latent blending uses this).

    Deterministic: no randomness is drawn inside the loop.
    """
    if uncond is None:
        uncond = np.zeros_like(cond)
    ts = sampling_timesteps(sched.total_steps, cfg.steps)
    s = cfg.guidance_scale
    z = z_start
    for j in range(cfg.steps):
        t, t_prev = ts[j], ts[j + 1]
        eps_u = denoiser.predict(z, t, uncond)
        eps_c = denoiser.predict(z, t, cond)
        if eps_u.shape != z.shape or eps_c.shape != z.shape:
            raise ModelError(
                f"denoiser output shape {eps_c.shape} does not match latent {z.shape}"
            )
        if s == 1.0:
            eps_hat = eps_c
        elif s == 0.0:
            eps_hat = eps_u
        else:
            eps_hat = eps_u + s * (eps_c - eps_u)
        z = ddim_step(z, eps_hat, t, t_prev, sched)
        if hook is not None:
            replaced = hook(z, t, t_prev)
            if replaced is not None:
                z = replaced
    return z


def training_loss(denoiser: Denoiser, z0: np.ndarray, cond: np.ndarray,
                  rng: np.random.Generator, sched: NoiseSchedule) -> float:
    """Draw (t, eps) and return the mean squared noise-prediction error."""
    if not np.all(np.isfinite(z0)):
        raise ShapeError("z0 must be finite")
    t = int(rng.integers(1, sched.total_steps + 1))
    eps = rng.standard_normal(z0.shape)
    z_t = forward_noise(z0, eps, t, sched)
    eps_hat = denoiser.predict(z_t, t, cond)
    if eps_hat.shape != z0.shape:
        raise ShapeError(f"prediction shape {eps_hat.shape} vs latent {z0.shape}")
    return float(np.mean((eps - eps_hat) ** 2))


def make_latent_blend_hook(z0_masked: np.ndarray, m_resized: np.ndarray,
                           sched: NoiseSchedule, rng: np.random.Generator,
                           *, edit_region_is_one: bool = True) -> StepHook:
    """Per-step hook realizing the latent-blending baseline.

    After each reverse step to t_prev, the preserve region of the latent is
    overwritten with the masked-image latent freshly noised to t_prev.
    """
    from .masks import latent_blend  # local import keeps masks free of cycles

    def hook(z: np.ndarray, t: int, t_prev: int) -> np.ndarray:
        if t_prev == 0:
            z_masked = z0_masked
        else:
            noise = rng.standard_normal(z0_masked.shape)
            z_masked = forward_noise(z0_masked, noise, t_prev, sched)
        return latent_blend(z, z_masked, m_resized,
                            edit_region_is_one=edit_region_is_one)

    return hook


class CountingDenoiser:
    """Wrap a denoiser and count evaluations (test instrumentation)."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.calls = 0

    def predict(self, z_t, t, cond):
        self.calls += 1
        return self.inner.predict(z_t, t, cond)

    def layer_features(self, z_t, t, cond):
        return self.inner.layer_features(z_t, t, cond)


def evenly_spaced(values: Sequence[int]) -> bool:
    """True if consecutive gaps differ by at most one step (helper for tests)."""
    gaps = np.diff(values)
    return bool(len(gaps) == 0 or np.ptp(gaps) <= 1)
