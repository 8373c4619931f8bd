"""Fidelity metrics over masked/unmasked regions plus pluggable
text-alignment backends.

PSNR, MSE and SSIM are computed from the textbook formulas on unit-range
images. SSIM uses an 11x11 Gaussian window (sigma 1.5, standard
constants), evaluated only where the full window fits; when a region mask
is given, windows touching masked pixels are excluded entirely, so
replacing masked pixels with noise provably cannot move the score.
Perceptual and caption-similarity metrics need pretrained networks and
are pluggable; absent backends are reported as missing, never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ShapeError, ValidationError
from .scenes import analyze_image

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    mse: float
    ssim: float
    region: str  # unmasked | masked | full
    n_images: int = 1
    lpips: float | None = None
    clip_sim: float | None = None

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "mse": self.mse, "ssim": self.ssim,
                "lpips": self.lpips, "clip_sim": self.clip_sim,
                "region": self.region, "n_images": self.n_images}


def psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_window_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    xs = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(xs**2) / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


_SSIM_KERNEL = _ssim_window_kernel()


def _valid_windows(channel: np.ndarray) -> np.ndarray:
    """All full-window weighted sums, shape (H-10, W-10)."""
    h, w = channel.shape
    n = SSIM_WINDOW
    out = np.zeros((h - n + 1, w - n + 1))
    for dy in range(n):
        for dx in range(n):
            out += _SSIM_KERNEL[dy, dx] * channel[dy:dy + h - n + 1, dx:dx + w - n + 1]
    return out


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM per valid window position for a single channel pair."""
    c1 = (SSIM_K1) ** 2
    c2 = (SSIM_K2) ** 2
    mu_a = _valid_windows(a)
    mu_b = _valid_windows(b)
    var_a = _valid_windows(a * a) - mu_a**2
    var_b = _valid_windows(b * b) - mu_b**2
    cov = _valid_windows(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def compute_fidelity(a: np.ndarray, b: np.ndarray,
                     region_mask: np.ndarray | None = None, *,
                     region_label: str | None = None) -> MetricReport:
    """PSNR/MSE/SSIM between two unit-range images.

    With a region mask, per-pixel metrics run over mask==0 pixels and the
    SSIM aggregate over windows fully inside that region.
    """
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if region_mask is not None and region_mask.shape != a.shape[-2:]:
        raise ShapeError(f"region mask {region_mask.shape} vs image {a.shape[-2:]}")
    if region_mask is None:
        keep = np.ones(a.shape[-2:], dtype=bool)
        region = region_label or "full"
    else:
        keep = region_mask == 0
        region = region_label or "unmasked"
        if not keep.any():
            raise ValidationError("region mask excludes every pixel")

    diff = (a - b)[:, keep]
    mse = float(np.mean(diff**2))
    psnr = psnr_from_mse(mse)

    h, w = a.shape[-2:]
    half = SSIM_WINDOW // 2
    if min(h, w) < SSIM_WINDOW:
        raise ValidationError(
            f"images must be at least {SSIM_WINDOW}px per side for SSIM, got {h}x{w}"
        )
    # window positions whose full footprint avoids excluded pixels
    excluded = ~keep
    ok = np.ones((h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1), dtype=bool)
    if excluded.any():
        for dy in range(SSIM_WINDOW):
            for dx in range(SSIM_WINDOW):
                ok &= ~excluded[dy:dy + h - SSIM_WINDOW + 1, dx:dx + w - SSIM_WINDOW + 1]
        if not ok.any():
            raise ValidationError("region leaves no complete SSIM window")
    maps = [ssim_map(a[c], b[c])[ok] for c in range(a.shape[0])]
    ssim = float(np.mean(maps))
    return MetricReport(psnr=psnr, mse=mse, ssim=ssim, region=region)


class EmbeddingBackend(Protocol):
    """Image/text embedding pair used for alignment scoring."""

    name: str

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...

    def embed_text(self, caption: str) -> np.ndarray: ...


class TokenOverlapBackend:
    """Offline stand-in: hashes scene color/shape tokens and caption words
    into a shared bag-of-words space, so a matching caption always scores
    above a mismatched one on procedural scenes."""

    name = "token-overlap-stub"

    def __init__(self, dim: int = 64):
        from .embedding import CaptionEmbedder

        self._embedder = CaptionEmbedder(dim)

    def embed_text(self, caption: str) -> np.ndarray:
        return self._embedder.embed(caption)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        return self._embedder.embed(analyze_image(image).caption())


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def text_alignment(image: np.ndarray, caption: str,
                   backend: EmbeddingBackend | None) -> float | None:
    """Cosine similarity in the backend's space; None when no backend."""
    if backend is None:
        return None
    return cosine(backend.embed_image(image), backend.embed_text(caption))
