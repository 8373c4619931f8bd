"""Plan execution and multi-turn session state.

Sessions live on disk: one directory per session holding an append-only
JSONL journal (first line session metadata, one line per round after
that) plus PNG artifacts referenced by relative paths. Stored plans get
refs so rounds can cite them. Per-session execution is serialized with a
lock; distinct sessions are independent.

A round runs: mask the current image, sample the dual-branch inpainter,
blur the mask, paste-blend into the current image. With a binary mask and
blur radius 0, pixels outside the mask are bit-equal to the input. Failed
rounds are recorded with diagnostics, never rolled back.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import imageio
from .branch import BranchNetwork, InjectionConfig, inpaint_sample, validate_scale
from .denoiser import ConvDenoiser, StackSpec
from .diffusion import SamplerConfig
from .embedding import CaptionEmbedder
from .errors import MaskEditError, NotFoundError, ValidationError
from .instructor import EditPlan, InstructorClients, make_stub_clients
from .masks import BlurSpec, blur_mask, paste_blend
from .schedule import NoiseSchedule, make_schedule


class IdentityCodec:
    """Latent space == pixel space; decode clamps to the image range.

    ``decode(encode(x)) == x`` exactly for images already in [0, 1].
    """

    downscale = 1

    def encode(self, image: np.ndarray) -> np.ndarray:
        return image

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.clip(latent, 0.0, 1.0)


@dataclass
class ModelBundle:
    base: ConvDenoiser
    branch: BranchNetwork
    schedule: NoiseSchedule
    embedder: CaptionEmbedder
    codec: IdentityCodec


def build_toy_bundle(seed: int = 0, *, channels: int = 3, hidden: int = 16,
                     total_steps: int = 1000, cond_dim: int = 32,
                     time_dim: int = 16) -> ModelBundle:
    spec = StackSpec(channels, (hidden, hidden, channels),
                     time_dim=time_dim, cond_dim=cond_dim)
    base = ConvDenoiser(spec, seed=seed)
    branch = BranchNetwork.for_base(base, seed=seed + 1)
    return ModelBundle(base=base, branch=branch,
                       schedule=make_schedule(total_steps, 1e-4, 2e-2),
                       embedder=CaptionEmbedder(cond_dim), codec=IdentityCodec())


def load_bundle(ckpt_dir) -> ModelBundle:
    ckpt = Path(ckpt_dir)
    base = ConvDenoiser.load(ckpt / "base.npz")
    branch = BranchNetwork.load(ckpt / "branch.npz")
    with open(ckpt / "config.json") as fh:
        cfg = json.load(fh)
    return ModelBundle(
        base=base, branch=branch,
        schedule=make_schedule(int(cfg["T"]), float(cfg["beta_min"]),
                               float(cfg["beta_max"])),
        embedder=CaptionEmbedder(base.spec.cond_dim), codec=IdentityCodec(),
    )


@dataclass(frozen=True)
class Overrides:
    """User substitutions for one round; always win over plan fields."""

    mask: np.ndarray | None = None
    caption: str | None = None
    preservation_scale: float | None = None  # external key "w"
    blur_radius: int | None = None

    def __post_init__(self):
        if self.caption is not None and not self.caption.strip():
            raise ValidationError("override caption must be nonempty")
        if self.preservation_scale is not None:
            validate_scale(self.preservation_scale)
        if self.blur_radius is not None and self.blur_radius < 0:
            raise ValidationError("override blur_radius must be >= 0")

    def to_dict(self) -> dict:
        out: dict = {}
        if self.mask is not None:
            out["mask"] = "<inline>"
        if self.caption is not None:
            out["caption"] = self.caption
        if self.preservation_scale is not None:
            out["w"] = self.preservation_scale
        if self.blur_radius is not None:
            out["blur_radius"] = self.blur_radius
        return out


def apply_overrides(plan: EditPlan, ov: Overrides) -> EditPlan:
    """New plan with user values swapped in; the original is untouched."""
    new_plan = plan
    if ov.mask is not None:
        if ov.mask.shape != plan.mask.shape:
            raise ValidationError(
                f"override mask {ov.mask.shape} does not match plan mask {plan.mask.shape}"
            )
        new_plan = replace(new_plan, mask=ov.mask)
    if ov.caption is not None:
        new_plan = replace(new_plan, target_caption=ov.caption)
    new_plan.validate()
    return new_plan


@dataclass
class EditRound:
    index: int
    plan_ref: str
    plan: dict  # agent plan as stored (pre-override)
    overrides: dict
    seed: int
    steps: int
    preservation_scale: float
    blur_radius: int
    status: str = "pending"
    result_ref: str | None = None
    mask_ref: str | None = None
    source_ref: str | None = None
    caption_used: str | None = None
    timing_ms: float | None = None
    denoiser_evals: int | None = None
    error: dict | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index, "plan_ref": self.plan_ref, "plan": self.plan,
            "overrides": self.overrides, "seed": self.seed, "steps": self.steps,
            "w": self.preservation_scale, "blur_radius": self.blur_radius,
            "status": self.status, "result_ref": self.result_ref,
            "mask_ref": self.mask_ref, "source_ref": self.source_ref,
            "caption_used": self.caption_used, "timing_ms": self.timing_ms,
            "denoiser_evals": self.denoiser_evals, "error": self.error,
        }

    @staticmethod
    def from_dict(d: dict) -> "EditRound":
        return EditRound(
            index=d["index"], plan_ref=d["plan_ref"], plan=d["plan"],
            overrides=d.get("overrides", {}), seed=d["seed"], steps=d["steps"],
            preservation_scale=d["w"], blur_radius=d["blur_radius"],
            status=d["status"], result_ref=d.get("result_ref"),
            mask_ref=d.get("mask_ref"), source_ref=d.get("source_ref"),
            caption_used=d.get("caption_used"), timing_ms=d.get("timing_ms"),
            denoiser_evals=d.get("denoiser_evals"), error=d.get("error"),
        )


@dataclass
class EditSession:
    id: str
    created_at: str
    source_ref: str
    rounds: list[EditRound] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "created_at": self.created_at,
                "source_ref": self.source_ref,
                "rounds": [r.to_dict() for r in self.rounds]}


class SessionStore:
    """Append-only journal + PNG artifacts under one root directory."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def _journal(self, session_id: str) -> Path:
        return self._dir(session_id) / "journal.jsonl"

    def create_session(self, image: np.ndarray) -> EditSession:
        session_id = uuid.uuid4().hex[:12]
        sdir = self._dir(session_id)
        sdir.mkdir(parents=True)
        source_ref = f"sessions/{session_id}/source.png"
        imageio.save_image(self.root / source_ref, image)
        session = EditSession(
            id=session_id,
            created_at=datetime.now(timezone.utc).isoformat(),
            source_ref=source_ref,
        )
        self._append(session_id, {"kind": "session", "id": session.id,
                                  "created_at": session.created_at,
                                  "source_ref": source_ref})
        return session

    def _append(self, session_id: str, record: dict) -> None:
        with open(self._journal(session_id), "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

    def get_session(self, session_id: str) -> EditSession:
        journal = self._journal(session_id)
        if not journal.exists():
            raise NotFoundError(f"unknown session {session_id!r}")
        session: EditSession | None = None
        with open(journal) as fh:
            for line in fh:
                record = json.loads(line)
                if record["kind"] == "session":
                    session = EditSession(id=record["id"],
                                          created_at=record["created_at"],
                                          source_ref=record["source_ref"])
                elif record["kind"] == "round":
                    assert session is not None
                    session.rounds.append(EditRound.from_dict(record["round"]))
        if session is None:
            raise NotFoundError(f"journal for {session_id!r} has no session record")
        return session

    def list_sessions(self) -> list[dict]:
        out = []
        for sdir in sorted((self.root / "sessions").iterdir()):
            if (sdir / "journal.jsonl").exists():
                session = self.get_session(sdir.name)
                out.append({"id": session.id, "created_at": session.created_at,
                            "rounds": len(session.rounds)})
        return out

    def append_round(self, session_id: str, rnd: EditRound) -> None:
        self._append(session_id, {"kind": "round", "round": rnd.to_dict()})

    def save_plan(self, session_id: str, plan: EditPlan) -> tuple[str, dict]:
        sdir = self._dir(session_id)
        plans_dir = sdir / "plans"
        plans_dir.mkdir(exist_ok=True)
        n = len(list(plans_dir.glob("plan_*.json")))
        plan_ref = f"sessions/{session_id}/plans/plan_{n:03d}.json"
        mask_ref = f"sessions/{session_id}/plans/plan_{n:03d}_mask.png"
        imageio.save_mask(self.root / mask_ref, plan.mask)
        payload = plan.to_dict(mask_ref=mask_ref)
        with open(self.root / plan_ref, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
        return plan_ref, payload

    def load_plan(self, plan_ref: str) -> EditPlan:
        from .instructor import plan_from_dict

        path = self.resolve(plan_ref)
        if not path.exists():
            raise NotFoundError(f"unknown plan ref {plan_ref!r}")
        with open(path) as fh:
            payload = json.load(fh)
        return plan_from_dict(payload, mask_loader=lambda ref: imageio.load_mask(self.resolve(ref)))

    def resolve(self, ref: str) -> Path:
        path = (self.root / ref).resolve()
        if not str(path).startswith(str(self.root.resolve())):
            raise ValidationError(f"artifact ref {ref!r} escapes the store")
        return path

    def load_image(self, ref: str) -> np.ndarray:
        path = self.resolve(ref)
        if not path.exists():
            raise NotFoundError(f"unknown artifact {ref!r}")
        return imageio.load_image(path)

    def current_image(self, session: EditSession) -> np.ndarray:
        for rnd in reversed(session.rounds):
            if rnd.status == "done" and rnd.result_ref:
                return self.load_image(rnd.result_ref)
        return self.load_image(session.source_ref)


class Conductor:
    """Binds a session store, a model bundle and instructor clients."""

    def __init__(self, store: SessionStore, bundle: ModelBundle,
                 clients: InstructorClients | None = None,
                 icfg: InjectionConfig = InjectionConfig(),
                 default_blur_radius: int = 7):
        self.store = store
        self.bundle = bundle
        self.clients = clients or make_stub_clients()
        self.icfg = icfg
        self.default_blur_radius = default_blur_radius

    def create_session(self, image: np.ndarray) -> EditSession:
        return self.store.create_session(image)

    def get_session(self, session_id: str) -> EditSession:
        return self.store.get_session(session_id)

    def list_sessions(self) -> list[dict]:
        return self.store.list_sessions()

    def plan(self, session_id: str, instruction: str) -> tuple[str, dict]:
        """Run the instructor against the session's current image."""
        from .instructor import build_plan

        session = self.store.get_session(session_id)
        current = self.store.current_image(session)
        plan = build_plan(instruction, current, self.clients)
        return self.store.save_plan(session_id, plan)

    def execute_plan(self, session_id: str, plan: EditPlan, *,
                     plan_ref: str = "<inline>",
                     overrides: Overrides | None = None,
                     scfg: SamplerConfig | None = None,
                     preservation_scale: float | None = None,
                     blur_radius: int | None = None) -> EditRound:
        """Run one edit round and append it to the session journal."""
        scfg = scfg or SamplerConfig()
        ov = overrides or Overrides()
        with self.store.lock(session_id):
            session = self.store.get_session(session_id)
            current = self.store.current_image(session)
            plan.validate(current.shape[-2:])
            effective = apply_overrides(plan, ov)
            w = (ov.preservation_scale if ov.preservation_scale is not None
                 else (preservation_scale if preservation_scale is not None
                       else self.icfg.preservation_scale))
            blur = (ov.blur_radius if ov.blur_radius is not None
                    else (blur_radius if blur_radius is not None
                          else self.default_blur_radius))
            icfg = InjectionConfig(preservation_scale=w, mode=self.icfg.mode)
            index = len(session.rounds)
            rnd = EditRound(
                index=index, plan_ref=plan_ref, plan=plan.to_dict(),
                overrides=ov.to_dict(), seed=scfg.seed, steps=scfg.steps,
                preservation_scale=w, blur_radius=blur,
                caption_used=effective.target_caption,
            )
            sdir = f"sessions/{session_id}/rounds/{index:03d}"
            (self.store.root / sdir).mkdir(parents=True, exist_ok=True)
            rnd.source_ref = session.source_ref
            for r in reversed(session.rounds):
                if r.status == "done" and r.result_ref:
                    rnd.source_ref = r.result_ref
                    break
            try:
                mask = effective.mask
                masked = current * (1.0 - mask[None])
                evals_before = self.bundle.base.eval_count
                started = time.perf_counter()
                raw = inpaint_sample(
                    self.bundle.base, self.bundle.branch, masked, mask,
                    effective.target_caption, icfg, scfg,
                    self.bundle.schedule, self.bundle.codec,
                    self.bundle.embedder,
                )
                blurred = blur_mask(mask, BlurSpec(blur))
                result = paste_blend(current, raw, blurred)
                rnd.timing_ms = (time.perf_counter() - started) * 1000.0
                rnd.denoiser_evals = self.bundle.base.eval_count - evals_before
                rnd.mask_ref = f"{sdir}/mask.png"
                imageio.save_mask(self.store.root / rnd.mask_ref, mask)
                rnd.result_ref = f"{sdir}/result.png"
                imageio.save_image(self.store.root / rnd.result_ref, result)
                rnd.status = "done"
            except MaskEditError as exc:
                rnd.status = "failed"
                rnd.error = exc.to_api_error()
            except Exception as exc:  # diagnostics must land in the journal
                rnd.status = "failed"
                rnd.error = {"code": "model_error", "message": repr(exc)}
            self.store.append_round(session_id, rnd)
            return rnd
