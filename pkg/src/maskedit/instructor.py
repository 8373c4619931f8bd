"""Instruction planning: classify the edit, find the target object's mask
through a detector client, and compose the post-edit caption.

Clients are pluggable. The stubs are fully offline and deterministic: the
language side is a small keyword grammar, the vision side recovers shapes
from pixels (or reads an attached scene graph, which also grounds
free-text labels). Remote adapters speak a one-POST-per-op JSON protocol
with timeout/retry handling; nothing in the test suite touches a network.
"""

from __future__ import annotations

import json
import os
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

import numpy as np

from . import imageio
from .embedding import tokenize
from .errors import ClientError, MaskEditError, NotFoundError, ValidationError
from .masks import dilate
from .scenes import PALETTE, ProceduralScene, analyze_image, article

EDIT_TYPES = ("addition", "removal", "local_edit", "background_edit")

_ADDITION_VERBS = {"add", "insert", "place", "put", "attach", "give", "draw"}
_REMOVAL_VERBS = {"remove", "delete", "erase", "eliminate"}
_LOCAL_VERBS = {"convert", "change", "replace", "turn", "swap", "make",
                "recolor", "repaint", "paint", "modify", "transform"}
_BACKGROUND_NOUNS = {"background", "backdrop", "scene", "setting", "sky"}
_PREPOSITIONS = {"from", "to", "into", "on", "in", "at", "of", "with", "by",
                 "behind", "under", "above", "near", "beside", "onto", "next"}
_ARTICLES = {"a", "an", "the", "s", "its", "his", "her", "their"}
_ATTRIBUTE_VERBS = {"make", "turn", "paint", "recolor", "repaint"}


@dataclass(frozen=True)
class EditInstruction:
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValidationError("instruction must be a nonempty string")


@dataclass(frozen=True)
class Classification:
    edit_type: str
    target: str
    anchor: str | None = None
    replacement: str | None = None
    low_confidence: bool = False


@dataclass(frozen=True)
class Detection:
    mask: np.ndarray = field(compare=False)
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("detection confidence must be in [0, 1]")

    @property
    def area(self) -> float:
        return float(self.mask.sum())


class MLLMClient(ABC):
    """Language/vision client: classification, description, captioning."""

    @abstractmethod
    def classify_verbose(self, text: str) -> Classification: ...

    @abstractmethod
    def caption(self, edit_type: str, target: str, image_descriptor: str,
                instruction: str | None = None) -> str: ...

    @abstractmethod
    def describe(self, image: np.ndarray) -> str: ...

    def classify(self, text: str) -> tuple[str, str]:
        c = self.classify_verbose(text)
        return c.edit_type, c.target

    def anchor_object(self, text: str) -> str | None:
        return self.classify_verbose(text).anchor

    def replacement(self, text: str) -> str | None:
        return self.classify_verbose(text).replacement


class DetectorClient(ABC):
    @abstractmethod
    def detect(self, image: np.ndarray, query: str) -> list[Detection]: ...

    @abstractmethod
    def detect_all(self, image: np.ndarray) -> list[Detection]: ...


# -- stub grammar ----------------------------------------------------------

def _collect_phrase(tokens: list[str], start: int) -> tuple[str, int]:
    """Tokens from ``start`` (articles skipped) up to the next preposition."""
    words = []
    i = start
    while i < len(tokens):
        tok = tokens[i]
        if tok in _PREPOSITIONS:
            break
        if tok not in _ARTICLES:
            words.append(tok)
        i += 1
    return " ".join(words), i


class StubMLLM(MLLMClient):
    """Deterministic keyword grammar plus pixel-level scene description.

    When built around a scene graph the description and label vocabulary
    come from the graph; otherwise both are recovered from the pixels.
    """

    def __init__(self, scene: ProceduralScene | None = None):
        self.scene = scene

    def classify_verbose(self, text: str) -> Classification:
        text = EditInstruction(text).text
        tokens = tokenize(text)
        verb_idx = None
        edit_type = None
        for i, tok in enumerate(tokens):
            if tok in _ADDITION_VERBS:
                verb_idx, edit_type = i, "addition"
                break
            if tok in _REMOVAL_VERBS:
                verb_idx, edit_type = i, "removal"
                break
            if tok in _LOCAL_VERBS:
                verb_idx, edit_type = i, "local_edit"
                break
        low_confidence = verb_idx is None
        if verb_idx is None:
            # Unknown verb: least destructive reading, flagged for review.
            verb_idx, edit_type = 0, "local_edit"
            start = verb_idx
            if tokens and tokens[0] not in _ARTICLES:
                start = 1 if len(tokens) > 1 else 0
            target, rest_idx = _collect_phrase(tokens, start)
        else:
            target, rest_idx = _collect_phrase(tokens, verb_idx + 1)
        if not target:
            raise ValidationError(f"could not find an object in {text!r}")

        replacement = None
        verb = tokens[verb_idx] if verb_idx < len(tokens) else ""
        target_words = target.split()
        if (edit_type == "local_edit" and verb in _ATTRIBUTE_VERBS
                and len(target_words) >= 2 and rest_idx >= len(tokens)):
            # "make the circle blue": last word is the attribute.
            replacement = target_words[-1]
            target = " ".join(target_words[:-1])

        if set(target.split()) & _BACKGROUND_NOUNS:
            edit_type = "background_edit"

        anchor = None
        i = rest_idx
        while i < len(tokens):
            tok = tokens[i]
            if tok in _PREPOSITIONS:
                phrase, j = _collect_phrase(tokens, i + 1)
                if phrase:
                    if tok in ("to", "into") and edit_type in ("local_edit", "background_edit"):
                        replacement = phrase
                    elif anchor is None:
                        anchor = phrase
                i = j
            else:
                i += 1
        return Classification(edit_type, target, anchor=anchor,
                              replacement=replacement,
                              low_confidence=low_confidence)

    def describe(self, image: np.ndarray) -> str:
        if self.scene is not None:
            return self.scene.caption()
        return analyze_image(image).caption()

    def caption(self, edit_type: str, target: str, image_descriptor: str,
                instruction: str | None = None) -> str:
        if edit_type not in EDIT_TYPES:
            raise ValidationError(f"unknown edit type {edit_type!r}")
        if not target.strip():
            raise ValidationError("target object must be nonempty")
        descriptor = image_descriptor.strip()
        bg_match = re.search(r"\s+on (?:a|an) (\w+) background$", descriptor)
        bg = bg_match.group(1) if bg_match else None
        core = descriptor[: bg_match.start()] if bg_match else descriptor

        segments = re.split(r",\s*|\s+and\s+|\s+holding\s+|\s+wearing\s+|\s+with\s+",
                            core)
        segments = [s for s in segments if s.strip()]
        target_tokens = set(tokenize(target))

        def matches(segment: str) -> bool:
            return target_tokens <= set(tokenize(segment))

        def join(parts: list[str]) -> str:
            if not parts:
                return ""
            if len(parts) == 1:
                return parts[0]
            return ", ".join(parts[:-1]) + " and " + parts[-1]

        result: str
        if edit_type == "removal":
            kept = [s for s in segments if not matches(s)]
            body = join(kept)
            if not body:
                result = f"a {bg} background" if bg else "an empty scene"
                return result
            result = body
        elif edit_type == "addition":
            anchor = self.anchor_object(instruction) if instruction else None
            addition = f"wearing {article(target)} {target}"
            if anchor:
                anchor_tokens = set(tokenize(anchor))
                hit = next((i for i, s in enumerate(segments)
                            if anchor_tokens <= set(tokenize(s))), None)
            else:
                hit = None
            if hit is not None:
                segments[hit] = f"{segments[hit]} {addition}"
                result = join(segments)
            else:
                result = f"{join(segments)} {addition}".strip()
        elif edit_type == "local_edit":
            repl = self.replacement(instruction) if instruction else None
            if repl is None:
                result = join(segments)
            else:
                out = []
                done = False
                for seg in segments:
                    if not done and matches(seg):
                        out.append(self._apply_replacement(seg, repl))
                        done = True
                    else:
                        out.append(seg)
                result = join(out)
        else:  # background_edit
            repl = self.replacement(instruction) if instruction else None
            if repl is None:
                return descriptor
            bg = repl
            result = join(segments)
            if not result:
                return f"a {bg} background"
        if bg:
            result = f"{result} on a {bg} background"
        if not result.strip():
            raise ClientError("composed an empty caption", stage="compose_caption")
        return result

    @staticmethod
    def _apply_replacement(segment: str, repl: str) -> str:
        repl_words = repl.split()
        seg_words = segment.split()
        if len(repl_words) == 1 and repl_words[0] in PALETTE:
            swapped = [repl_words[0] if w in PALETTE else w for w in seg_words]
            if swapped != seg_words:
                return " ".join(swapped)
        return f"{article(repl)} {repl}"


class StubDetector(DetectorClient):
    """Grounded detection over recovered shapes or an attached scene graph.

    Confidence is the fraction of query tokens matched by the object's
    descriptor tokens; zero-overlap objects are not reported.
    """

    def __init__(self, scene: ProceduralScene | None = None):
        self.scene = scene

    def _objects(self, image: np.ndarray) -> list[tuple[set[str], np.ndarray]]:
        if self.scene is not None:
            return [(s.tokens(), self.scene.shape_mask(i))
                    for i, s in enumerate(self.scene.shapes)]
        rec = analyze_image(image)
        return [(item.tokens(), item.mask) for item in rec.items]

    def detect(self, image: np.ndarray, query: str) -> list[Detection]:
        q = [t for t in tokenize(query) if t not in _ARTICLES]
        if not q:
            return []
        out = []
        for tokens, mask in self._objects(image):
            matched = sum(1 for t in q if t in tokens)
            if matched == 0:
                continue
            out.append(Detection(mask=mask, confidence=matched / len(q)))
        return out

    def detect_all(self, image: np.ndarray) -> list[Detection]:
        return [Detection(mask=mask, confidence=1.0)
                for _, mask in self._objects(image)]


# -- plan assembly ---------------------------------------------------------

@dataclass(frozen=True)
class InstructorConfig:
    confidence_threshold: float = 0.5
    addition_band_px: int = 3


@dataclass(frozen=True)
class EditPlan:
    edit_type: str
    target_object: str
    mask: np.ndarray = field(compare=False)
    target_caption: str
    detector_confidence: float
    anchor: str | None = None
    low_confidence: bool = False

    def validate(self, image_shape: tuple[int, int] | None = None) -> None:
        if self.edit_type not in EDIT_TYPES:
            raise ValidationError(f"edit_type {self.edit_type!r} not in {EDIT_TYPES}")
        if not self.target_object.strip():
            raise ValidationError("target_object must be nonempty")
        if not self.target_caption.strip():
            raise ValidationError("target_caption must be nonempty")
        if not 0.0 <= self.detector_confidence <= 1.0:
            raise ValidationError("detector_confidence must be in [0, 1]")
        if self.mask.ndim != 2:
            raise ValidationError("plan mask must be rank 2")
        if image_shape is not None and self.mask.shape != image_shape:
            raise ValidationError(
                f"plan mask {self.mask.shape} does not match image {image_shape}"
            )

    def to_dict(self, mask_ref: str | None = None) -> dict:
        if mask_ref is None:
            mask_ref = "data:image/png;base64," + imageio.b64_encode(
                imageio.mask_to_png_bytes(self.mask))
        out = {
            "edit_type": self.edit_type,
            "target_object": self.target_object,
            "mask_ref": mask_ref,
            "target_caption": self.target_caption,
            "confidence": self.detector_confidence,
        }
        if self.anchor is not None:
            out["anchor"] = self.anchor
        if self.low_confidence:
            out["low_confidence"] = True
        return out

    def to_json(self, mask_ref: str | None = None) -> str:
        return json.dumps(self.to_dict(mask_ref), sort_keys=True)


def plan_from_dict(d: dict, *, mask_loader=None) -> EditPlan:
    ref = d["mask_ref"]
    prefix = "data:image/png;base64,"
    if isinstance(ref, str) and ref.startswith(prefix):
        mask = imageio.mask_from_png_bytes(imageio.b64_decode(ref[len(prefix):]))
    elif mask_loader is not None:
        mask = mask_loader(ref)
    else:
        mask = imageio.load_mask(ref)
    plan = EditPlan(
        edit_type=d["edit_type"], target_object=d["target_object"], mask=mask,
        target_caption=d["target_caption"],
        detector_confidence=float(d["confidence"]),
        anchor=d.get("anchor"), low_confidence=bool(d.get("low_confidence", False)),
    )
    plan.validate()
    return plan


@dataclass(frozen=True)
class InstructorClients:
    mllm: MLLMClient
    detector: DetectorClient


def make_stub_clients(scene: ProceduralScene | None = None) -> InstructorClients:
    return InstructorClients(StubMLLM(scene), StubDetector(scene))


def classify_edit(ins: EditInstruction | str, mllm: MLLMClient) -> tuple[str, str]:
    text = ins.text if isinstance(ins, EditInstruction) else EditInstruction(ins).text
    edit_type, target = mllm.classify(text)
    if edit_type not in EDIT_TYPES:
        raise ClientError(f"client returned unknown edit type {edit_type!r}")
    if not target.strip():
        raise ClientError("client returned an empty target object")
    return edit_type, target


def locate_target(image: np.ndarray, target: str, edit_type: str,
                  detector: DetectorClient, *, anchor: str | None = None,
                  config: InstructorConfig = InstructorConfig()) -> tuple[np.ndarray, float]:
    """Pick the best detection (confidence, then area) and derive the edit
    mask: the object itself, a dilation band around the anchor for
    additions, or the foreground complement for background edits."""
    if not target.strip():
        raise ValidationError("target object must be nonempty")
    h, w = image.shape[-2:]
    if edit_type == "background_edit":
        dets = detector.detect_all(image)
        union = np.zeros((h, w))
        for d in dets:
            union = np.maximum(union, d.mask)
        conf = min((d.confidence for d in dets), default=1.0)
        return 1.0 - union, conf
    query = anchor if (edit_type == "addition" and anchor) else target
    dets = [d for d in detector.detect(image, query)
            if d.confidence >= config.confidence_threshold]
    if not dets:
        raise NotFoundError(f"no detection for {query!r}", stage="locate_target")
    best = max(dets, key=lambda d: (d.confidence, d.area))
    if edit_type == "addition":
        band = dilate(best.mask, config.addition_band_px) - best.mask
        return band, best.confidence
    return best.mask.astype(float), best.confidence


def compose_caption(edit_type: str, target: str, image_descriptor: str,
                    mllm: MLLMClient, *, instruction: str | None = None) -> str:
    if not target.strip():
        raise ValidationError("target object must be nonempty")
    caption = mllm.caption(edit_type, target, image_descriptor, instruction)
    if not caption.strip():
        raise ClientError("client composed an empty caption", stage="compose_caption")
    return caption


def _tag_stage(stage: str):
    class _Tagger:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if isinstance(exc, MaskEditError) and exc.stage is None:
                exc.stage = stage
            return False

    return _Tagger()


def build_plan(ins: EditInstruction | str, image: np.ndarray,
               clients: InstructorClients,
               config: InstructorConfig = InstructorConfig()) -> EditPlan:
    """classify -> locate -> caption; errors carry the failing stage."""
    instruction = ins if isinstance(ins, EditInstruction) else EditInstruction(ins)
    with _tag_stage("classify_edit"):
        cls = clients.mllm.classify_verbose(instruction.text)
        if cls.edit_type not in EDIT_TYPES:
            raise ClientError(f"client returned unknown edit type {cls.edit_type!r}")
        if not cls.target.strip():
            raise ClientError("client returned an empty target object")
    with _tag_stage("locate_target"):
        mask, conf = locate_target(image, cls.target, cls.edit_type,
                                   clients.detector, anchor=cls.anchor,
                                   config=config)
    with _tag_stage("compose_caption"):
        descriptor = clients.mllm.describe(image)
        caption = compose_caption(cls.edit_type, cls.target, descriptor,
                                  clients.mllm, instruction=instruction.text)
    plan = EditPlan(edit_type=cls.edit_type, target_object=cls.target, mask=mask,
                    target_caption=caption, detector_confidence=conf,
                    anchor=cls.anchor, low_confidence=cls.low_confidence)
    plan.validate(image.shape[-2:])
    return plan


# -- remote adapters ---------------------------------------------------------

@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    api_key: str | None = None
    timeout_ms: int = 10000
    retries: int = 2

    @staticmethod
    def from_env(prefix: str) -> "ClientConfig | None":
        endpoint = os.environ.get(f"{prefix}_ENDPOINT")
        if not endpoint:
            return None
        return ClientConfig(
            endpoint=endpoint,
            api_key=os.environ.get(f"{prefix}_KEY"),
            timeout_ms=int(os.environ.get(f"{prefix}_TIMEOUT_MS", "10000")),
            retries=int(os.environ.get(f"{prefix}_RETRIES", "2")),
        )


class _RemoteBase:
    def __init__(self, config: ClientConfig, transport=None):
        import httpx

        self.config = config
        headers = {}
        if config.api_key:
            headers["authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.endpoint, headers=headers,
            timeout=config.timeout_ms / 1000.0, transport=transport,
        )

    def _post(self, op: str, payload: dict) -> dict:
        import httpx

        attempts = 0
        last: Exception | None = None
        while attempts <= self.config.retries:
            attempts += 1
            try:
                resp = self._client.post(f"/{op}", json=payload)
                resp.raise_for_status()
                return resp.json()
            except httpx.TimeoutException as exc:
                last = exc
            except httpx.HTTPStatusError as exc:
                if exc.response.status_code < 500:
                    raise ClientError(f"{op} rejected: {exc}", attempts=attempts,
                                      retryable=False) from exc
                last = exc
            except httpx.HTTPError as exc:
                last = exc
        raise ClientError(f"{op} failed after {attempts} attempts: {last}",
                          attempts=attempts, retryable=True) from last


class RemoteMLLM(_RemoteBase, MLLMClient):
    def classify_verbose(self, text: str) -> Classification:
        d = self._post("classify", {"text": text})
        return Classification(d["edit_type"], d["target_object"],
                              anchor=d.get("anchor"),
                              replacement=d.get("replacement"),
                              low_confidence=bool(d.get("low_confidence", False)))

    def caption(self, edit_type, target, image_descriptor, instruction=None) -> str:
        d = self._post("caption", {
            "edit_type": edit_type, "target_object": target,
            "image_descriptor": image_descriptor, "instruction": instruction,
        })
        return d["caption"]

    def describe(self, image: np.ndarray) -> str:
        d = self._post("describe", {
            "image_b64": imageio.b64_encode(imageio.image_to_png_bytes(image)),
        })
        return d["caption"]


class RemoteDetector(_RemoteBase, DetectorClient):
    def _decode(self, items) -> list[Detection]:
        out = []
        for item in items:
            mask = imageio.mask_from_png_bytes(imageio.b64_decode(item["mask_b64"]))
            out.append(Detection(mask=mask, confidence=float(item["confidence"])))
        return out

    def detect(self, image: np.ndarray, query: str) -> list[Detection]:
        d = self._post("detect", {
            "image_b64": imageio.b64_encode(imageio.image_to_png_bytes(image)),
            "query": query,
        })
        return self._decode(d["detections"])

    def detect_all(self, image: np.ndarray) -> list[Detection]:
        d = self._post("detect_all", {
            "image_b64": imageio.b64_encode(imageio.image_to_png_bytes(image)),
        })
        return self._decode(d["detections"])
