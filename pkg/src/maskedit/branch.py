"""Dual-branch inpainting: an attention-free copy of the base stack reads
[noisy latent, masked-image latent, resized mask] and its per-layer
features are added into the frozen base through zero-initialized 1x1
links, scaled by the preservation scale.

A freshly initialized branch is extensionally invisible: every link maps
everything to zero, so the combined system equals the base model until
training moves the link weights. Scale 0 short-circuits to the untouched
base feature, making the w=0 identity bitwise, not approximate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .denoiser import ConvDenoiser, StackSpec, time_embedding
from .diffusion import SamplerConfig, sample
from .errors import ConfigurationError, ModelError, ShapeError, ValidationError
from .kernels import link1x1_backward, link1x1_forward
from .masks import downsample_mask
from .schedule import NoiseSchedule

InjectionMode = Literal["full", "half", "last"]


@dataclass(frozen=True)
class InjectionConfig:
    preservation_scale: float = 1.0  # "w" in external payloads
    mode: InjectionMode = "full"

    def __post_init__(self):
        validate_scale(self.preservation_scale)
        if self.mode not in ("full", "half", "last"):
            raise ConfigurationError(f"unknown injection mode {self.mode!r}")


def validate_scale(w: float) -> float:
    if not (0.0 <= w <= 1.0):
        raise ValidationError(f"preservation scale w must be in [0, 1], got {w}")
    return float(w)


def injected_layers(mode: InjectionMode, n_layers: int) -> set[int]:
    if mode == "full":
        return set(range(n_layers))
    if mode == "half":
        return set(range(n_layers // 2, n_layers))
    return {n_layers - 1}


def assemble_branch_input(z_t: np.ndarray, z0_masked: np.ndarray,
                          m_resized: np.ndarray) -> np.ndarray:
    """Channel concatenation [z_t, z0_masked, mask]; shape (2C+1, H, W)."""
    if z_t.shape != z0_masked.shape:
        raise ShapeError(f"z_t {z_t.shape} vs z0_masked {z0_masked.shape}")
    if z_t.ndim != 3:
        raise ShapeError(f"latents must be rank 3, got {z_t.shape}")
    if m_resized.shape != z_t.shape[1:]:
        raise ShapeError(f"mask {m_resized.shape} vs latent spatial {z_t.shape[1:]}")
    if m_resized.min() < 0 or m_resized.max() > 1:
        raise ValidationError("mask values must lie in [0, 1]")
    return np.concatenate([z_t, z0_masked, m_resized[None]], axis=0)


@dataclass
class ZeroLink:
    """Learnable 1x1 channel mix, initialized to the zero map."""

    weight: np.ndarray
    bias: np.ndarray

    @staticmethod
    def zeros(channels: int) -> "ZeroLink":
        return ZeroLink(np.zeros((channels, channels)), np.zeros(channels))

    def apply(self, feature: np.ndarray) -> np.ndarray:
        return link1x1_forward(feature, self.weight, self.bias)


def inject(base_feature: np.ndarray, branch_feature: np.ndarray,
           link: ZeroLink, w: float) -> np.ndarray:
    """base_feature + w * link(branch_feature).

    Returns the base feature object untouched when w == 0, so disabling
    the branch is exact by construction.
    """
    validate_scale(w)
    if base_feature.shape[-2:] != branch_feature.shape[-2:]:
        raise ShapeError(
            f"spatially incompatible features {base_feature.shape} vs {branch_feature.shape}"
        )
    if w == 0.0:
        return base_feature
    single = base_feature.ndim == 3
    bf = branch_feature[None] if single else branch_feature
    addend = w * link.apply(bf)
    return base_feature + (addend[0] if single else addend)


class BranchNetwork:
    """Attention-free feature extractor plus its zero links.

    Mirrors the base stack's layer count and widths; consumes 2C+1 input
    channels and no caption embedding (text never touches the branch).
    """

    CHECKPOINT_VERSION = 1

    def __init__(self, channels: int, widths: tuple[int, ...],
                 time_dim: int = 16, seed: int = 0):
        from .denoiser import ConvStack  # deferred to keep import order tidy

        self.channels = channels
        spec = StackSpec(2 * channels + 1, widths, time_dim=time_dim, cond_dim=None)
        self.stack = ConvStack(spec, np.random.default_rng(seed))
        self.links = [ZeroLink.zeros(width) for width in widths]

    @staticmethod
    def for_base(base: ConvDenoiser, seed: int = 0) -> "BranchNetwork":
        return BranchNetwork(base.channels, base.spec.widths,
                             time_dim=base.spec.time_dim, seed=seed)

    @property
    def n_layers(self) -> int:
        return self.stack.spec.n_layers

    @property
    def widths(self) -> tuple[int, ...]:
        return self.stack.spec.widths

    def link(self, i: int) -> ZeroLink:
        if not 0 <= i < self.n_layers:
            raise IndexError(f"layer index {i} outside [0, {self.n_layers - 1}]")
        return self.links[i]

    def signature(self) -> dict:
        return {"channels": self.channels, "n_layers": self.n_layers,
                "widths": list(self.widths),
                "input_channels": self.stack.spec.in_channels}

    def compatible_with(self, base: ConvDenoiser) -> bool:
        return (base.channels == self.channels
                and base.spec.widths == self.widths
                and base.spec.time_dim == self.stack.spec.time_dim)

    def params(self) -> dict[str, np.ndarray]:
        out = {f"stack.{k}": v for k, v in self.stack.params.items()}
        for i, link in enumerate(self.links):
            out[f"link{i}.w"] = link.weight
            out[f"link{i}.b"] = link.bias
        return out

    def set_param(self, key: str, value: np.ndarray) -> None:
        if key.startswith("stack."):
            self.stack.params[key[len("stack."):]] = value
        elif key.startswith("link"):
            idx, kind = key[4:].split(".")
            link = self.links[int(idx)]
            if kind == "w":
                link.weight = value
            else:
                link.bias = value
        else:
            raise KeyError(key)

    def features(self, branch_input: np.ndarray, tvec: np.ndarray):
        """Per-layer post-activation features for a batch; returns
        (features list, cache for backprop)."""
        temb = time_embedding(tvec, self.stack.spec.time_dim)
        _, cache = self.stack.forward(branch_input, temb, None)
        return cache["feats"], cache

    def param_checksum(self) -> str:
        digest = hashlib.sha256()
        params = self.params()
        for key in sorted(params):
            digest.update(key.encode())
            digest.update(np.ascontiguousarray(params[key]).tobytes())
        return digest.hexdigest()

    def save(self, path) -> None:
        meta = json.dumps({"kind": "branch", "version": self.CHECKPOINT_VERSION,
                           "signature": self.signature(),
                           "time_dim": self.stack.spec.time_dim})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8),
                 **self.params())

    @staticmethod
    def load(path) -> "BranchNetwork":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("kind") != "branch":
                raise ModelError(f"{path} is not a branch checkpoint")
            if meta.get("version") != BranchNetwork.CHECKPOINT_VERSION:
                raise ModelError(f"unsupported branch checkpoint version {meta.get('version')}")
            sig = meta["signature"]
            net = BranchNetwork(int(sig["channels"]),
                                tuple(int(w) for w in sig["widths"]),
                                time_dim=int(meta["time_dim"]))
            for key in net.params():
                net.set_param(key, np.array(data[key]))
        return net


class InjectedDenoiser:
    """Denoiser adapter: base forward with branch features injected.

    The branch runs once per denoiser evaluation, i.e. in both guidance
    passes. Evaluations are counted on the wrapped base model.
    """

    def __init__(self, base: ConvDenoiser, branch: BranchNetwork,
                 z0_masked: np.ndarray, m_resized: np.ndarray,
                 icfg: InjectionConfig):
        if not branch.compatible_with(base):
            raise ModelError(
                f"branch {branch.signature()} incompatible with base widths {base.spec.widths}"
            )
        self.base = base
        self.branch = branch
        self.z0_masked = z0_masked
        self.m_resized = m_resized
        self.icfg = icfg
        self._sites = injected_layers(icfg.mode, branch.n_layers)

    def _injections(self, z_t: np.ndarray, tvec: np.ndarray):
        w = self.icfg.preservation_scale
        if w == 0.0:
            return None
        branch_in = assemble_branch_input(z_t[0] if z_t.ndim == 4 else z_t,
                                          self.z0_masked, self.m_resized)
        feats, _ = self.branch.features(branch_in[None], tvec)
        out: list[np.ndarray | None] = []
        for i in range(self.branch.n_layers):
            if i in self._sites:
                out.append(w * self.branch.links[i].apply(feats[i]))
            else:
                out.append(None)
        return out

    def predict(self, z_t: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        tvec = np.array([t])
        inj = self._injections(z_t, tvec)
        out, _ = self.base.evaluate(z_t[None], tvec, cond[None], injections=inj)
        return out[0]

    def layer_features(self, z_t: np.ndarray, t: int, cond: np.ndarray):
        tvec = np.array([t])
        inj = self._injections(z_t, tvec)
        _, cache = self.base.evaluate(z_t[None], tvec, cond[None], injections=inj)
        return [f[0] for f in cache["feats"]]


def inpaint_sample(base: ConvDenoiser, branch: BranchNetwork,
                   masked_image: np.ndarray, mask: np.ndarray, caption: str,
                   icfg: InjectionConfig, scfg: SamplerConfig,
                   sched: NoiseSchedule, codec, embedder) -> np.ndarray:
    """Run the full dual-branch reverse loop; returns the raw (pre-blend)
    decoded image. Deterministic given scfg.seed."""
    if mask.shape != masked_image.shape[1:]:
        raise ShapeError(f"mask {mask.shape} vs image spatial {masked_image.shape[1:]}")
    z0_masked = codec.encode(masked_image)
    lat_h, lat_w = z0_masked.shape[1:]
    m_resized = downsample_mask(mask, lat_h, lat_w)
    cond = embedder.embed(caption)
    uncond = embedder.embed("")
    rng = np.random.default_rng(scfg.seed)
    z_start = rng.standard_normal(z0_masked.shape)
    injected = InjectedDenoiser(base, branch, z0_masked, m_resized, icfg)
    z0 = sample(injected, z_start, cond, sched, scfg, uncond=uncond)
    return codec.decode(z0)


def branch_loss_and_grads(base: ConvDenoiser, branch: BranchNetwork,
                          icfg: InjectionConfig, z_t: np.ndarray,
                          tvec: np.ndarray, cembs: np.ndarray,
                          branch_in: np.ndarray, eps: np.ndarray):
    """Noise-prediction loss through the injected system and exact
    gradients for branch + link parameters only (base left untouched)."""
    sites = injected_layers(icfg.mode, branch.n_layers)
    w = icfg.preservation_scale
    feats, bcache = branch.features(branch_in, tvec)
    injections: list[np.ndarray | None] = []
    for i in range(branch.n_layers):
        if i in sites and w != 0.0:
            injections.append(w * branch.links[i].apply(feats[i]))
        else:
            injections.append(None)
    out, cache = base.evaluate(z_t, tvec, cembs, injections=injections)
    resid = out - eps
    loss = float(np.mean(resid ** 2))
    d_out = (2.0 / resid.size) * resid

    _, _, site_grads = base.stack.backward(cache, d_out, need_param_grads=False)
    grads: dict[str, np.ndarray] = {}
    extra: list[np.ndarray | None] = [None] * branch.n_layers
    for i in sorted(sites):
        g_add = site_grads[i]
        gf, glw, glb = link1x1_backward(feats[i], branch.links[i].weight, g_add)
        grads[f"link{i}.w"] = w * glw
        grads[f"link{i}.b"] = w * glb
        extra[i] = w * gf
    stack_grads, _, _ = branch.stack.backward(
        bcache, np.zeros_like(feats[-1]), extra_feature_grads=extra)
    for key, val in stack_grads.items():
        grads[f"stack.{key}"] = val
    return loss, grads
