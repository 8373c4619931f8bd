"""Procedural scenes: colored geometric shapes on plain backgrounds.

These stand in for a photo corpus at desk scale. Scene graphs are the
ground truth: renders, per-shape masks and captions all derive from them
deterministically, and :func:`analyze_image` recovers the graph back from
pixels (palette quantization + connected components + fill-ratio shape
classification), which powers the offline client stubs.

Shapes may carry a free-text ``label`` overriding the default
"<color> <kind>" descriptor, so fixtures can ground arbitrary nouns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import tokenize
from .errors import ValidationError

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.65, 0.15),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "purple": (0.55, 0.15, 0.70),
    "orange": (0.95, 0.55, 0.10),
    "cyan": (0.10, 0.75, 0.80),
}

BACKGROUNDS: dict[str, tuple[float, float, float]] = {
    "white": (0.95, 0.95, 0.95),
    "gray": (0.55, 0.55, 0.55),
    "beige": (0.90, 0.85, 0.70),
}

KINDS = ("circle", "square", "triangle")

_ALL_COLORS = {**PALETTE, **BACKGROUNDS}


def article(phrase: str) -> str:
    return "an" if phrase[:1].lower() in "aeiou" else "a"


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    color: str
    cx: int
    cy: int
    size: int  # half-extent in pixels
    label: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown shape kind {self.kind!r}")
        if self.color not in PALETTE:
            raise ValidationError(f"unknown shape color {self.color!r}")
        if self.size < 1:
            raise ValidationError("shape size must be >= 1")

    def descriptor(self) -> str:
        return self.label if self.label else f"{self.color} {self.kind}"

    def tokens(self) -> set[str]:
        toks = {self.color, self.kind}
        if self.label:
            toks |= set(tokenize(self.label))
        return toks


@dataclass(frozen=True)
class ProceduralScene:
    width: int
    height: int
    background: str
    shapes: tuple[ShapeSpec, ...]

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise ValidationError(f"unknown background {self.background!r}")

    def shape_mask(self, index: int) -> np.ndarray:
        shape = self.shapes[index]
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        r = shape.size
        if shape.kind == "circle":
            member = (xs - shape.cx) ** 2 + (ys - shape.cy) ** 2 <= r * r
        elif shape.kind == "square":
            member = np.maximum(np.abs(xs - shape.cx), np.abs(ys - shape.cy)) <= r
        else:  # triangle, apex up
            member = (np.abs(ys - shape.cy) <= r) & (
                np.abs(xs - shape.cx) <= (ys - shape.cy + r) / 2.0
            )
        return member.astype(float)

    def foreground_mask(self) -> np.ndarray:
        if not self.shapes:
            return np.zeros((self.height, self.width))
        masks = [self.shape_mask(i) for i in range(len(self.shapes))]
        return np.clip(np.sum(masks, axis=0), 0.0, 1.0)

    def render(self) -> np.ndarray:
        img = np.empty((3, self.height, self.width))
        img[:] = np.array(BACKGROUNDS[self.background])[:, None, None]
        for i, shape in enumerate(self.shapes):
            mask = self.shape_mask(i).astype(bool)
            for c, value in enumerate(PALETTE[shape.color]):
                img[c][mask] = value
        return img

    def render_background(self) -> np.ndarray:
        return replace(self, shapes=()).render()

    def caption(self) -> str:
        suffix = f"on a {self.background} background"
        if not self.shapes:
            return f"a {self.background} background"
        parts = [f"{article(s.descriptor())} {s.descriptor()}" for s in self.shapes]
        if len(parts) == 1:
            body = parts[0]
        else:
            body = ", ".join(parts[:-1]) + " and " + parts[-1]
        return f"{body} {suffix}"

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "background": self.background,
            "shapes": [
                {"kind": s.kind, "color": s.color, "cx": s.cx, "cy": s.cy,
                 "size": s.size, "label": s.label}
                for s in self.shapes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "ProceduralScene":
        shapes = tuple(
            ShapeSpec(s["kind"], s["color"], int(s["cx"]), int(s["cy"]),
                      int(s["size"]), s.get("label"))
            for s in d["shapes"]
        )
        return ProceduralScene(int(d["width"]), int(d["height"]),
                               d["background"], shapes)


def synth_dataset(rng: np.random.Generator, n: int, size: int = 32) -> list[ProceduralScene]:
    """n scenes with 1-3 non-overlapping, distinctly described shapes."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    scenes = []
    colors = list(PALETTE)
    bgs = list(BACKGROUNDS)
    max_r = max(5, size // 4)
    for _ in range(n):
        background = bgs[rng.integers(len(bgs))]
        wanted = int(rng.integers(1, 4))
        shapes: list[ShapeSpec] = []
        tries = 0
        while len(shapes) < wanted and tries < 60:
            tries += 1
            kind = KINDS[rng.integers(len(KINDS))]
            color = colors[rng.integers(len(colors))]
            if any(s.kind == kind and s.color == color for s in shapes):
                continue
            r = int(rng.integers(5, max_r + 1))
            if 2 * r + 2 >= size:
                continue
            cx = int(rng.integers(r + 1, size - r - 1))
            cy = int(rng.integers(r + 1, size - r - 1))
            if any(max(abs(cx - s.cx), abs(cy - s.cy)) <= r + s.size + 1 for s in shapes):
                continue
            shapes.append(ShapeSpec(kind, color, cx, cy, r))
        scenes.append(ProceduralScene(size, size, background, tuple(shapes)))
    return scenes


# -- pixel-level scene recovery (the stubs' "vision") ---------------------

@dataclass(frozen=True)
class RecoveredShape:
    color: str
    kind: str
    mask: np.ndarray = field(compare=False)
    area: int
    cx: float
    cy: float

    def descriptor(self) -> str:
        return f"{self.color} {self.kind}"

    def tokens(self) -> set[str]:
        return {self.color, self.kind}


@dataclass(frozen=True)
class RecoveredScene:
    background: str
    items: tuple[RecoveredShape, ...]

    def caption(self) -> str:
        if not self.items:
            return f"a {self.background} background"
        parts = [f"{article(i.descriptor())} {i.descriptor()}" for i in self.items]
        body = parts[0] if len(parts) == 1 else ", ".join(parts[:-1]) + " and " + parts[-1]
        return f"{body} on a {self.background} background"


def quantize_colors(img: np.ndarray) -> np.ndarray:
    """Index of the nearest named color per pixel; order = _ALL_COLORS."""
    names = list(_ALL_COLORS)
    table = np.array([_ALL_COLORS[name] for name in names])  # (K, 3)
    flat = img.reshape(3, -1).T  # (N, 3)
    d2 = ((flat[:, None, :] - table[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1).reshape(img.shape[1:])


def _components(mask: np.ndarray) -> list[np.ndarray]:
    remaining = mask.copy()
    out = []
    while remaining.any():
        seed = np.argwhere(remaining)[0]
        comp = np.zeros_like(remaining)
        comp[tuple(seed)] = True
        while True:
            grown = comp.copy()
            grown[1:, :] |= comp[:-1, :]
            grown[:-1, :] |= comp[1:, :]
            grown[:, 1:] |= comp[:, :-1]
            grown[:, :-1] |= comp[:, 1:]
            grown &= remaining
            if np.array_equal(grown, comp):
                break
            comp = grown
        out.append(comp)
        remaining &= ~comp
    return out


def _classify_kind(comp: np.ndarray) -> str:
    rows = np.any(comp, axis=1)
    cols = np.any(comp, axis=0)
    h = rows.sum()
    w = cols.sum()
    fill = comp.sum() / float(h * w)
    if fill >= 0.85:
        return "square"
    if fill <= 0.60:
        return "triangle"
    return "circle"


def analyze_image(img: np.ndarray, min_area: int = 12) -> RecoveredScene:
    """Recover shapes and background from a rendered (or edited) scene."""
    names = list(_ALL_COLORS)
    idx = quantize_colors(img)
    counts = np.bincount(idx.ravel(), minlength=len(names))
    bg_order = [names.index(b) for b in BACKGROUNDS]
    bg_idx = max(bg_order, key=lambda i: counts[i])
    background = names[bg_idx]
    items: list[RecoveredShape] = []
    for color in PALETTE:
        ci = names.index(color)
        if counts[ci] < min_area:
            continue
        for comp in _components(idx == ci):
            area = int(comp.sum())
            if area < min_area:
                continue
            ys, xs = np.nonzero(comp)
            items.append(RecoveredShape(
                color=color, kind=_classify_kind(comp), mask=comp.astype(float),
                area=area, cx=float(xs.mean()), cy=float(ys.mean()),
            ))
    items.sort(key=lambda s: (s.mask.argmax() // s.mask.shape[1],
                              s.mask.argmax() % s.mask.shape[1]))
    return RecoveredScene(background=background, items=tuple(items))
