"""Desk-scale training: pretrain the toy base on procedural scenes, then
train the background branch against the noise-prediction objective with
the base frozen throughout.

Reference mode is plain seeded SGD, single threaded, so identical configs
give bit-identical loss curves. The mask mix mirrors the three pair
kinds: free-form brush strokes, exact object masks, and deletion pairs
(clean background target under an arbitrary mask) which teach removal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .branch import BranchNetwork, InjectionConfig, branch_loss_and_grads
from .branch import assemble_branch_input
from .denoiser import ConvDenoiser
from .diffusion import forward_noise
from .errors import ConfigurationError, GenerationError, TrainingDivergedError
from .masks import downsample_mask, filter_mask, random_brush_mask
from .scenes import ProceduralScene
from .schedule import NoiseSchedule

MASK_KINDS = ("random_brush", "segmentation_like", "deletion_pair")


@dataclass(frozen=True)
class Probe:
    """Fixed evaluation batch: a deterministic loss functional of the
    parameters, used to read learning progress off a noisy SGD stream."""

    z_t: np.ndarray
    tvec: np.ndarray
    cembs: np.ndarray
    branch_in: np.ndarray
    eps: np.ndarray


@dataclass
class TrainResult:
    curve: list  # (step, minibatch loss)
    probe_curve: list  # (step, fixed-probe loss); empty when no probe


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch: int = 4
    learning_rate: float = 0.05
    seed: int = 0
    mask_mix_weights: dict = field(default_factory=lambda: {
        "random_brush": 0.4, "segmentation_like": 0.4, "deletion_pair": 0.2,
    })
    min_mask_area: float = 0.02
    resample_limit: int = 25

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        weights = self.mask_mix_weights
        if set(weights) - set(MASK_KINDS):
            raise ConfigurationError(f"unknown mask kinds in mix: {set(weights) - set(MASK_KINDS)}")
        if abs(sum(weights.values()) - 1.0) > 1e-9:
            raise ConfigurationError("mask mix weights must sum to 1")


@dataclass(frozen=True)
class TrainingPair:
    image: np.ndarray  # clean target, needed by the objective
    masked_image: np.ndarray
    mask: np.ndarray
    caption_target: str
    mask_kind: str


def make_training_pair(scene: ProceduralScene, rng: np.random.Generator,
                       mix: dict, *, min_mask_area: float = 0.02,
                       resample_limit: int = 25) -> TrainingPair:
    kinds = sorted(mix)
    probs = np.array([mix[k] for k in kinds])
    kind = kinds[rng.choice(len(kinds), p=probs / probs.sum())]
    h, w = scene.height, scene.width
    if kind == "deletion_pair":
        image = scene.render_background()
        caption = ProceduralScene(scene.width, scene.height,
                                  scene.background, ()).caption()
    else:
        image = scene.render()
        caption = scene.caption()
    for _ in range(resample_limit):
        if kind == "segmentation_like" and scene.shapes:
            mask = scene.shape_mask(int(rng.integers(len(scene.shapes))))
        elif kind == "deletion_pair" and scene.shapes and rng.random() < 0.5:
            mask = scene.shape_mask(int(rng.integers(len(scene.shapes))))
        else:
            mask = random_brush_mask(rng, h, w, strokes=int(rng.integers(1, 4)),
                                     width_range=(2.5, 5.0))
        if filter_mask(mask, min_mask_area, require_connected=False):
            masked = image * (1.0 - mask[None])
            return TrainingPair(image=image, masked_image=masked, mask=mask,
                                caption_target=caption, mask_kind=kind)
    raise GenerationError(
        f"no acceptable {kind} mask after {resample_limit} resamples"
    )


def _sgd_update(params: dict, grads: dict, lr: float) -> None:
    for key, grad in grads.items():
        params[key] -= lr * grad


def pretrain_base(base: ConvDenoiser, scenes: list[ProceduralScene],
                  cfg: TrainConfig, sched: NoiseSchedule, embedder,
                  codec) -> list[tuple[int, float]]:
    """Noise-prediction SGD over clean scenes; updates the base in place."""
    rng = np.random.default_rng(cfg.seed)
    latents = [codec.encode(s.render()) for s in scenes]
    cembs = [embedder.embed(s.caption()) for s in scenes]
    curve = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(scenes), size=cfg.batch)
        z0 = np.stack([latents[i] for i in idx])
        cemb = np.stack([cembs[i] for i in idx])
        tvec = rng.integers(1, sched.total_steps + 1, size=cfg.batch)
        eps = rng.standard_normal(z0.shape)
        z_t = np.stack([
            forward_noise(z0[j], eps[j], int(tvec[j]), sched)
            for j in range(cfg.batch)
        ])
        loss, grads = base.loss_and_grads(z_t, tvec, cemb, eps)
        if not np.isfinite(loss):
            raise TrainingDivergedError("base pretraining diverged",
                                        step=step, loss=loss)
        _sgd_update(base.stack.params, grads, cfg.learning_rate)
        curve.append((step, loss))
    return curve


def build_probe(pairs: list[TrainingPair], rng: np.random.Generator,
                sched: NoiseSchedule, embedder, codec, *,
                n_pairs: int = 8,
                t_values: tuple[int, ...] | None = None) -> Probe:
    """Freeze (pair, t, noise) triples once; reuse them at every readout."""
    if t_values is None:
        total = sched.total_steps
        t_values = tuple(max(1, round(total * q)) for q in (0.125, 0.375, 0.625, 0.875))
    z_ts, tvec, cembs, branch_ins, eps_all = [], [], [], [], []
    for pair in pairs[:n_pairs]:
        z0 = codec.encode(pair.image)
        z0_masked = codec.encode(pair.masked_image)
        m_res = downsample_mask(pair.mask, z0.shape[1], z0.shape[2])
        cemb = embedder.embed(pair.caption_target)
        for t in t_values:
            eps = rng.standard_normal(z0.shape)
            z_t = forward_noise(z0, eps, int(t), sched)
            z_ts.append(z_t)
            tvec.append(int(t))
            cembs.append(cemb)
            branch_ins.append(assemble_branch_input(z_t, z0_masked, m_res))
            eps_all.append(eps)
    return Probe(np.stack(z_ts), np.array(tvec), np.stack(cembs),
                 np.stack(branch_ins), np.stack(eps_all))


def probe_loss(base: ConvDenoiser, branch: BranchNetwork, probe: Probe,
               icfg: InjectionConfig = InjectionConfig()) -> float:
    """Forward-only loss on the fixed probe batch."""
    from .branch import injected_layers

    sites = injected_layers(icfg.mode, branch.n_layers)
    w = icfg.preservation_scale
    feats, _ = branch.features(probe.branch_in, probe.tvec)
    injections = [
        w * branch.links[i].apply(feats[i]) if (i in sites and w != 0.0) else None
        for i in range(branch.n_layers)
    ]
    out, _ = base.evaluate(probe.z_t, probe.tvec, probe.cembs,
                           injections=injections)
    return float(np.mean((out - probe.eps) ** 2))


def train_branch(base: ConvDenoiser, branch: BranchNetwork,
                 pairs: list[TrainingPair], cfg: TrainConfig,
                 sched: NoiseSchedule, embedder, codec,
                 icfg: InjectionConfig = InjectionConfig(),
                 probe: Probe | None = None,
                 probe_every: int = 20) -> TrainResult:
    """Optimize branch + link parameters only; the base is never touched.

    When a probe is given, its loss is recorded at step 0 and every
    ``probe_every`` steps (and at the final step), giving a noise-free
    view of progress alongside the stochastic minibatch curve.
    """
    rng = np.random.default_rng(cfg.seed)
    z0s = [codec.encode(p.image) for p in pairs]
    masked = [codec.encode(p.masked_image) for p in pairs]
    cembs = [embedder.embed(p.caption_target) for p in pairs]
    resized = [
        downsample_mask(p.mask, z0s[i].shape[1], z0s[i].shape[2])
        for i, p in enumerate(pairs)
    ]
    params = branch.params()
    result = TrainResult(curve=[], probe_curve=[])
    if probe is not None:
        result.probe_curve.append((0, probe_loss(base, branch, probe, icfg)))
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pairs), size=cfg.batch)
        z0 = np.stack([z0s[i] for i in idx])
        cemb = np.stack([cembs[i] for i in idx])
        tvec = rng.integers(1, sched.total_steps + 1, size=cfg.batch)
        eps = rng.standard_normal(z0.shape)
        z_t = np.stack([
            forward_noise(z0[j], eps[j], int(tvec[j]), sched)
            for j in range(cfg.batch)
        ])
        branch_in = np.stack([
            assemble_branch_input(z_t[j], masked[i], resized[i])
            for j, i in enumerate(idx)
        ])
        loss, grads = branch_loss_and_grads(base, branch, icfg, z_t, tvec,
                                            cemb, branch_in, eps)
        if not np.isfinite(loss):
            raise TrainingDivergedError("branch training diverged",
                                        step=step, loss=loss)
        _sgd_update(params, grads, cfg.learning_rate)
        result.curve.append((step, loss))
        done = step + 1
        if probe is not None and (done % probe_every == 0 or done == cfg.steps):
            result.probe_curve.append((done, probe_loss(base, branch, probe, icfg)))
    return result


def smoothed(curve: list[tuple[int, float]], step: int, window: int = 25) -> float:
    """Mean loss over the ``window`` entries ending at ``step``."""
    values = [loss for s, loss in curve if step - window < s <= step]
    if not values:
        raise ValueError(f"no curve entries at step {step}")
    return float(np.mean(values))


def save_loss_curve(path, curve: list[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows(curve)


def load_loss_curve(path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(int(step), float(loss)) for step, loss in reader]


def unmasked_region_mse(result: np.ndarray, reference: np.ndarray,
                        mask: np.ndarray) -> float:
    keep = mask == 0
    diff = (result - reference)[:, keep]
    return float(np.mean(diff**2))


def heldout_comparison(base: ConvDenoiser, branch: BranchNetwork,
                       pairs: list[TrainingPair], sched: NoiseSchedule,
                       embedder, codec, scfg,
                       icfg: InjectionConfig = InjectionConfig()) -> dict:
    """Raw (pre-blend) unmasked-region MSE: injected system vs base only.

    Both runs share the seed and starting noise; lower is better.
    """
    from .branch import inpaint_sample
    from .diffusion import sample

    inj_total, base_total = [], []
    for pair in pairs:
        raw = inpaint_sample(base, branch, codec.encode(pair.masked_image),
                             pair.mask, pair.caption_target, icfg, scfg,
                             sched, codec, embedder)
        rng = np.random.default_rng(scfg.seed)
        z_start = rng.standard_normal(codec.encode(pair.image).shape)
        z_base = sample(base, z_start, embedder.embed(pair.caption_target),
                        sched, scfg, uncond=embedder.embed(""))
        base_img = codec.decode(z_base)
        inj_total.append(unmasked_region_mse(raw, pair.image, pair.mask))
        base_total.append(unmasked_region_mse(base_img, pair.image, pair.mask))
    return {"injected_mse": float(np.mean(inj_total)),
            "base_mse": float(np.mean(base_total))}
