"""Small convolutional noise predictor with hand-rolled backprop.

The same stack class backs both the base model and the background branch:
a chain of 3x3 convolutions with tanh between them, timestep (and
optionally caption) conditioning added as channel biases after the first
convolution. Every hidden layer's post-activation output is a "feature"
that outside code can read (``layer_features``) or additively modify
(``injections``), which is how the dual-branch system hooks in.

Gradients are exact (verified against central finite differences in the
test suite); the convolution work runs through ``maskedit.kernels``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ModelError
from .kernels import conv3x3_backward, conv3x3_forward


@dataclass(frozen=True)
class StackSpec:
    in_channels: int
    widths: tuple[int, ...]  # output channels per layer; last = model output
    time_dim: int = 16
    cond_dim: int | None = 32  # None: no caption conditioning (branch style)

    def __post_init__(self):
        if self.in_channels < 1 or len(self.widths) < 2:
            raise ConfigurationError("need >=1 input channel and >=2 layers")
        if any(w < 1 for w in self.widths):
            raise ConfigurationError("layer widths must be positive")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ConfigurationError("time_dim must be a positive even number")

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "widths": list(self.widths),
                "time_dim": self.time_dim, "cond_dim": self.cond_dim}

    @staticmethod
    def from_dict(d: dict) -> "StackSpec":
        return StackSpec(int(d["in_channels"]), tuple(int(w) for w in d["widths"]),
                         int(d["time_dim"]),
                         None if d["cond_dim"] is None else int(d["cond_dim"]))


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape (batch, dim)."""
    t = np.asarray(t, dtype=float).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ConvStack:
    """Parameter container + forward/backward for one conv chain."""

    def __init__(self, spec: StackSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        fan_in = spec.in_channels
        for i, width in enumerate(spec.widths):
            std = 1.0 / np.sqrt(fan_in * 9)
            self.params[f"conv{i}.w"] = rng.standard_normal((width, fan_in, 3, 3)) * std
            self.params[f"conv{i}.b"] = np.zeros(width)
            fan_in = width
        self.params["tproj"] = rng.standard_normal(
            (spec.widths[0], spec.time_dim)) * 0.1
        if spec.cond_dim is not None:
            self.params["cproj"] = rng.standard_normal(
                (spec.widths[0], spec.cond_dim)) * 0.1

    def forward(self, x: np.ndarray, temb: np.ndarray,
                cemb: np.ndarray | None,
                injections: list[np.ndarray | None] | None = None):
        """Returns (out, cache). ``injections[i]`` is added to layer i's
        post-activation feature before it feeds the next layer."""
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.in_channels:
            raise ModelError(f"input shape {x.shape} does not match spec {spec}")
        if spec.cond_dim is not None and cemb is None:
            raise ModelError("stack expects a caption embedding")
        n = spec.n_layers
        inputs = [x]
        acts = []        # per layer: pre-injection activation output
        feats = []       # per layer: post-injection feature
        h = x
        for i in range(n):
            a = conv3x3_forward(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"])
            if i == 0:
                a = a + (temb @ self.params["tproj"].T)[:, :, None, None]
                if spec.cond_dim is not None:
                    a = a + (cemb @ self.params["cproj"].T)[:, :, None, None]
            f = np.tanh(a) if i < n - 1 else a
            acts.append(f)
            if injections is not None and injections[i] is not None:
                f = f + injections[i]
            feats.append(f)
            if i < n - 1:
                inputs.append(f)
            h = f
        cache = {"inputs": inputs, "acts": acts, "feats": feats,
                 "temb": temb, "cemb": cemb}
        return h, cache

    def backward(self, cache: dict, d_out: np.ndarray,
                 extra_feature_grads: list[np.ndarray | None] | None = None,
                 *, need_param_grads: bool = True):
        """Walk the chain backwards.

        Returns (param_grads, d_input, site_grads) where site_grads[i] is
        the gradient arriving at layer i's post-injection feature, i.e.
        exactly the gradient of any addend injected there.
        """
        spec = self.spec
        n = spec.n_layers
        grads: dict[str, np.ndarray] = {}
        site_grads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
        g = d_out
        for i in range(n - 1, -1, -1):
            if extra_feature_grads is not None and extra_feature_grads[i] is not None:
                g = g + extra_feature_grads[i]
            site_grads[i] = g
            # through the activation (last layer is linear)
            g_a = g if i == n - 1 else g * (1.0 - cache["acts"][i] ** 2)
            if i == 0:
                gsum = g_a.sum(axis=(2, 3))
                if need_param_grads:
                    grads["tproj"] = gsum.T @ cache["temb"]
                    if spec.cond_dim is not None:
                        grads["cproj"] = gsum.T @ cache["cemb"]
            gx, gw, gb = conv3x3_backward(
                cache["inputs"][i], self.params[f"conv{i}.w"], g_a)
            if need_param_grads:
                grads[f"conv{i}.w"] = gw
                grads[f"conv{i}.b"] = gb
            g = gx
        return (grads if need_param_grads else None), g, site_grads

    def features_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        return [(width, h, w) for width in self.spec.widths]


class ConvDenoiser:
    """Base noise predictor; satisfies the sampler's Denoiser protocol."""

    def __init__(self, spec: StackSpec, seed: int = 0):
        if spec.cond_dim is None:
            raise ConfigurationError("base denoiser requires caption conditioning")
        self.spec = spec
        self.stack = ConvStack(spec, np.random.default_rng(seed))
        self.eval_count = 0

    @property
    def n_layers(self) -> int:
        return self.spec.n_layers

    @property
    def channels(self) -> int:
        return self.spec.widths[-1]

    def evaluate(self, x: np.ndarray, tvec: np.ndarray, cembs: np.ndarray,
                 injections=None):
        """Batched forward; every call counts as one model evaluation."""
        self.eval_count += 1
        temb = time_embedding(tvec, self.spec.time_dim)
        return self.stack.forward(x, temb, cembs, injections)

    def predict(self, z_t: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        out, _ = self.evaluate(z_t[None], np.array([t]), cond[None])
        return out[0]

    def layer_features(self, z_t: np.ndarray, t: int, cond: np.ndarray) -> list[np.ndarray]:
        _, cache = self.evaluate(z_t[None], np.array([t]), cond[None])
        return [f[0] for f in cache["feats"]]

    # -- training support ------------------------------------------------

    def loss_and_grads(self, z_t: np.ndarray, tvec: np.ndarray, cembs: np.ndarray,
                       eps: np.ndarray):
        """Mean squared noise-prediction error and grads for all params."""
        out, cache = self.evaluate(z_t, tvec, cembs)
        resid = out - eps
        loss = float(np.mean(resid ** 2))
        d_out = (2.0 / resid.size) * resid
        grads, _, _ = self.stack.backward(cache, d_out)
        return loss, grads

    def param_checksum(self) -> str:
        digest = hashlib.sha256()
        for key in sorted(self.stack.params):
            digest.update(key.encode())
            digest.update(np.ascontiguousarray(self.stack.params[key]).tobytes())
        return digest.hexdigest()

    def save(self, path) -> None:
        meta = json.dumps({"kind": "base_denoiser", "version": 1,
                           "spec": self.spec.to_dict()})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8),
                 **self.stack.params)

    @staticmethod
    def load(path) -> "ConvDenoiser":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("kind") != "base_denoiser":
                raise ModelError(f"{path} is not a base denoiser checkpoint")
            model = ConvDenoiser(StackSpec.from_dict(meta["spec"]))
            for key in model.stack.params:
                model.stack.params[key] = np.array(data[key])
        return model
