"""Mask manipulation: bicubic downsampling to latent resolution, Gaussian
blurring, exact pixel-space blending, the latent-blending baseline's
elementwise select, random brush-stroke synthesis, and mask filtering.

Convention, global to the package: mask value 1 marks the edit/generate
region, 0 the preserve region. Masks are rank-2 float arrays in [0, 1];
on disk they are single-channel 8-bit PNGs with 255 = edit region.

Blends are computed as ``a + m*(b - a)`` with an explicit m==1 branch so
that all three exactness contracts hold bitwise: m=0 gives a, m=1 gives
b, and equal inputs pass through untouched for any m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    GenerationError,
    ParameterError,
    ShapeError,
    ValidationError,
)

CATMULL_ROM_A = -0.5


def _cubic_weight(x: np.ndarray) -> np.ndarray:
    """Catmull-Rom kernel (a = -0.5) evaluated at distances |x|."""
    a = CATMULL_ROM_A
    ax = np.abs(x)
    w = np.where(
        ax <= 1.0,
        (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0,
        np.where(ax < 2.0, a * (ax**3 - 5.0 * ax**2 + 8.0 * ax - 4.0), 0.0),
    )
    return w


def _resample_axis(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    src = arr.shape[axis]
    if target == src:
        return arr
    scale = src / target
    centers = (np.arange(target) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(int)
    frac = centers - base
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros((target,) + moved.shape[1:])
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, src - 1)
        out += _cubic_weight(frac - k)[(...,) + (None,) * (moved.ndim - 1)] * moved[idx]
    return np.moveaxis(out, 0, axis)


def downsample_mask(m: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bicubic (Catmull-Rom) reduction, then clamp to [0, 1].

    Continuous values are kept; nothing is re-binarized. Upsampling
    requests are rejected.
    """
    if m.ndim != 2:
        raise ShapeError(f"mask must be rank 2, got {m.shape}")
    h, w = m.shape
    if target_h < 1 or target_w < 1:
        raise DimensionError("target dimensions must be positive")
    if target_h > h or target_w > w:
        raise DimensionError(
            f"cannot upsample mask {m.shape} to ({target_h}, {target_w})"
        )
    out = _resample_axis(_resample_axis(m.astype(float), target_h, 0), target_w, 1)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class BlurSpec:
    radius: int = 7  # pixels; 0 = identity. Gaussian sigma = radius / 2.

    def __post_init__(self):
        if self.radius < 0:
            raise ValidationError("blur radius must be >= 0")

    def kernel(self) -> np.ndarray:
        if self.radius == 0:
            return np.array([1.0])
        sigma = self.radius / 2.0
        xs = np.arange(-self.radius, self.radius + 1, dtype=float)
        k = np.exp(-(xs**2) / (2.0 * sigma**2))
        return k / k.sum()


def blur_mask(m: np.ndarray, spec: BlurSpec) -> np.ndarray:
    """Separable Gaussian with reflect padding, clamped to [0, 1]."""
    if m.ndim != 2:
        raise ShapeError(f"mask must be rank 2, got {m.shape}")
    if spec.radius == 0:
        return m.astype(float, copy=True)
    k = spec.kernel()
    r = spec.radius

    def conv_axis(a: np.ndarray, axis: int) -> np.ndarray:
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        ap = np.pad(a, pad, mode="reflect")
        moved = np.moveaxis(ap, axis, 0)
        n = a.shape[axis]
        acc = np.zeros((n,) + moved.shape[1:])
        for j, kj in enumerate(k):
            acc += kj * moved[j:j + n]
        return np.moveaxis(acc, 0, axis)

    out = conv_axis(conv_axis(m.astype(float), 0), 1)
    return np.clip(out, 0.0, 1.0)


def _lerp_exact(at_zero: np.ndarray, at_one: np.ndarray, m: np.ndarray) -> np.ndarray:
    return np.where(m >= 1.0, at_one, at_zero + m * (at_one - at_zero))


def paste_blend(source: np.ndarray, generated: np.ndarray,
                m_blur: np.ndarray) -> np.ndarray:
    """Pixel-space composite: generated where the (blurred) mask is 1,
    source where it is 0, linear in between."""
    if source.shape != generated.shape:
        raise ShapeError(f"source {source.shape} vs generated {generated.shape}")
    if m_blur.shape != source.shape[-2:]:
        raise ShapeError(f"mask {m_blur.shape} vs image spatial {source.shape[-2:]}")
    m = m_blur if source.ndim == 2 else m_blur[None]
    return _lerp_exact(source, generated, m)


def latent_blend(z_step: np.ndarray, z_step_masked: np.ndarray,
                 m_resized: np.ndarray, *, edit_region_is_one: bool = True) -> np.ndarray:
    """Latent-blending baseline select: keep the freshly generated latent
    in the edit region and the noised masked-image latent elsewhere.

    ``edit_region_is_one=False`` flips the roles, reproducing the
    opposite-polarity formulation verbatim.
    """
    if z_step.shape != z_step_masked.shape:
        raise ShapeError(f"z_step {z_step.shape} vs masked {z_step_masked.shape}")
    if m_resized.shape != z_step.shape[-2:]:
        raise ShapeError(f"mask {m_resized.shape} vs latent spatial {z_step.shape[-2:]}")
    m = m_resized if z_step.ndim == 2 else m_resized[None]
    if edit_region_is_one:
        return _lerp_exact(z_step_masked, z_step, m)
    return _lerp_exact(z_step, z_step_masked, m)


def random_brush_mask(rng: np.random.Generator, height: int, width: int, *,
                      strokes: int = 4,
                      width_range: tuple[float, float] = (3.0, 6.0),
                      coverage_bounds: tuple[float, float] = (0.0, 1.0),
                      max_tries: int = 100) -> np.ndarray:
    """Union of random thick polyline strokes; binary; seed-reproducible.

    Masks are redrawn until coverage lands inside ``coverage_bounds``
    (strokes=0 returns the empty mask without a coverage check).
    """
    if strokes < 0:
        raise ParameterError("strokes must be >= 0")
    lo, hi = coverage_bounds
    if not (0.0 <= lo <= hi <= 1.0):
        raise ParameterError(f"infeasible coverage bounds [{lo}, {hi}]")
    if width_range[0] <= 0 or width_range[0] > width_range[1]:
        raise ParameterError(f"bad width range {width_range}")
    if strokes == 0:
        return np.zeros((height, width))
    if lo >= 1.0:
        raise ParameterError("coverage lower bound must be < 1 when strokes > 0")

    ys, xs = np.mgrid[0:height, 0:width]
    for _ in range(max_tries):
        mask = np.zeros((height, width), dtype=bool)
        for _ in range(strokes):
            y = rng.uniform(0, height)
            x = rng.uniform(0, width)
            angle = rng.uniform(0, 2 * np.pi)
            n_seg = int(rng.integers(3, 7))
            thick = rng.uniform(*width_range)
            for _ in range(n_seg):
                length = rng.uniform(min(height, width) / 8, min(height, width) / 3)
                y2 = y + length * np.sin(angle)
                x2 = x + length * np.cos(angle)
                mask |= _stamp_segment(ys, xs, y, x, y2, x2, thick / 2.0)
                y, x = y2, x2
                angle += rng.uniform(-0.6, 0.6)
        cov = mask.mean()
        if lo <= cov <= hi:
            return mask.astype(float)
    raise GenerationError(
        f"could not draw a mask with coverage in [{lo}, {hi}] after {max_tries} tries"
    )


def _stamp_segment(ys, xs, y1, x1, y2, x2, radius) -> np.ndarray:
    """Pixels within ``radius`` of the segment (y1,x1)-(y2,x2)."""
    dy, dx = y2 - y1, x2 - x1
    den = dy * dy + dx * dx
    if den == 0:
        d2 = (ys - y1) ** 2 + (xs - x1) ** 2
        return d2 <= radius * radius
    tt = np.clip(((ys - y1) * dy + (xs - x1) * dx) / den, 0.0, 1.0)
    py = y1 + tt * dy
    px = x1 + tt * dx
    d2 = (ys - py) ** 2 + (xs - px) ** 2
    return d2 <= radius * radius


def filter_mask(m: np.ndarray, min_area_frac: float,
                require_connected: bool) -> bool:
    """Accept a binary mask iff its area fraction is large enough and,
    when asked, its 1-region is a single 4-connected component.

    The empty mask never counts as connected.
    """
    if m.ndim != 2:
        raise ShapeError(f"mask must be rank 2, got {m.shape}")
    vals = np.unique(m)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValidationError("filter_mask requires a binary mask")
    area = m.mean()
    if area < min_area_frac:
        return False
    if require_connected:
        total = int(m.sum())
        if total == 0:
            return False
        filled = _flood_fill_4(m.astype(bool))
        return int(filled.sum()) == total
    return True


def _flood_fill_4(m: np.ndarray) -> np.ndarray:
    """Region of m reachable 4-connected from its first true pixel."""
    seed_idx = np.argwhere(m)
    visited = np.zeros_like(m)
    visited[tuple(seed_idx[0])] = True
    while True:
        grown = visited.copy()
        grown[1:, :] |= visited[:-1, :]
        grown[:-1, :] |= visited[1:, :]
        grown[:, 1:] |= visited[:, :-1]
        grown[:, :-1] |= visited[:, 1:]
        grown &= m
        if np.array_equal(grown, visited):
            return visited
        visited = grown


def dilate(m: np.ndarray, radius: int) -> np.ndarray:
    """Binary Chebyshev dilation (square structuring element)."""
    out = m.astype(bool)
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        out = grown
    return out.astype(float)
