import hashlib
import json

import numpy as np
import pytest

from maskedit.branch import BranchNetwork
from maskedit.conductor import (
    Conductor,
    IdentityCodec,
    Overrides,
    SessionStore,
    apply_overrides,
    build_toy_bundle,
)
from maskedit.diffusion import SamplerConfig
from maskedit.errors import NotFoundError, ValidationError
from maskedit.instructor import make_stub_clients


@pytest.fixture()
def conductor(tmp_path, small_bundle, two_shape_scene):
    store = SessionStore(tmp_path / "store")
    return Conductor(store, small_bundle,
                     clients=make_stub_clients(two_shape_scene))


def _plan_and_round(conductor, image, instruction, *, seed=0, steps=4,
                    blur=0, overrides=None):
    session = conductor.create_session(image)
    plan_ref, _ = conductor.plan(session.id, instruction)
    plan = conductor.store.load_plan(plan_ref)
    rnd = conductor.execute_plan(session.id, plan, plan_ref=plan_ref,
                                 overrides=overrides,
                                 scfg=SamplerConfig(steps=steps, seed=seed),
                                 blur_radius=blur)
    return session, plan, rnd


def test_identity_codec_round_trip():
    codec = IdentityCodec()
    img = np.random.default_rng(0).uniform(0, 1, (3, 8, 8))
    assert np.array_equal(codec.decode(codec.encode(img)), img)


def test_session_store_semantics(tmp_path, scene_image):
    store = SessionStore(tmp_path / "s")
    session = store.create_session(scene_image)
    assert store.get_session(session.id).rounds == []
    assert store.get_session(session.id).id == session.id
    assert [s["id"] for s in store.list_sessions()] == [session.id]
    with pytest.raises(NotFoundError):
        store.get_session("missing")


def test_round_executes_and_preserves_background(conductor, scene_image):
    session, plan, rnd = _plan_and_round(conductor, scene_image,
                                         "remove the red circle", blur=0)
    assert rnd.status == "done"
    result = conductor.store.load_image(rnd.result_ref)
    source = conductor.store.load_image(session.source_ref)
    keep = plan.mask == 0
    assert np.array_equal(result[:, keep], source[:, keep])
    assert np.mean((result[:, ~keep] - source[:, ~keep]) ** 2) > 0


def test_round_deterministic_under_seed(conductor, scene_image):
    _, _, r1 = _plan_and_round(conductor, scene_image,
                               "remove the red circle", seed=9)
    _, _, r2 = _plan_and_round(conductor, scene_image,
                               "remove the red circle", seed=9)
    a = (conductor.store.root / r1.result_ref).read_bytes()
    b = (conductor.store.root / r2.result_ref).read_bytes()
    assert hashlib.sha256(a).hexdigest() == hashlib.sha256(b).hexdigest()


def test_single_pass_efficiency_denoiser_evals(conductor, scene_image):
    steps = 5
    _, _, rnd = _plan_and_round(conductor, scene_image,
                                "remove the red circle", steps=steps)
    assert rnd.denoiser_evals == 2 * steps


def test_round_chaining_uses_previous_result(conductor, scene_image):
    session = conductor.create_session(scene_image)
    ref1, _ = conductor.plan(session.id, "remove the red circle")
    plan1 = conductor.store.load_plan(ref1)
    r1 = conductor.execute_plan(session.id, plan1, plan_ref=ref1,
                                scfg=SamplerConfig(steps=3, seed=0))
    assert r1.status == "done"
    ref2, _ = conductor.plan(session.id, "remove the blue square")
    plan2 = conductor.store.load_plan(ref2)
    r2 = conductor.execute_plan(session.id, plan2, plan_ref=ref2,
                                scfg=SamplerConfig(steps=3, seed=1))
    assert r2.source_ref == r1.result_ref
    loaded = conductor.get_session(session.id)
    assert [r.index for r in loaded.rounds] == [0, 1]


def test_replanning_happens_on_latest_result(conductor, scene_image):
    session = conductor.create_session(scene_image)
    ref1, _ = conductor.plan(session.id, "remove the red circle")
    plan1 = conductor.store.load_plan(ref1)
    conductor.execute_plan(session.id, plan1, plan_ref=ref1,
                           overrides=Overrides(blur_radius=0),
                           scfg=SamplerConfig(steps=3, seed=0))
    # The circle is gone from the current image; its pixels were replaced
    # by whatever the untrained model dreamt, so a second identical plan
    # request must fail detection rather than reuse the stale source.
    conductor.clients = make_stub_clients()  # pixel-recovery stubs
    with pytest.raises(NotFoundError):
        conductor.plan(session.id, "remove the red circle")


def test_override_caption_keeps_agent_mask(conductor, scene_image):
    _, plan, rnd = _plan_and_round(conductor, scene_image,
                                   "remove the red circle",
                                   overrides=Overrides(caption="a plain wall"))
    assert rnd.caption_used == "a plain wall"
    stored_mask = conductor.store.load_image  # noqa: F841 (mask ref below)
    from maskedit import imageio

    mask = imageio.load_mask(conductor.store.root / rnd.mask_ref)
    assert np.array_equal(mask, plan.mask)
    # agent caption retained in the stored plan payload
    assert rnd.plan["target_caption"] == plan.target_caption


def test_override_mask_replaces_agent_mask(conductor, scene_image):
    user_mask = np.zeros(scene_image.shape[1:])
    user_mask[:8, :8] = 1.0
    _, plan, rnd = _plan_and_round(conductor, scene_image,
                                   "remove the red circle",
                                   overrides=Overrides(mask=user_mask))
    from maskedit import imageio

    mask = imageio.load_mask(conductor.store.root / rnd.mask_ref)
    assert np.array_equal(mask, user_mask)
    assert not np.array_equal(mask, plan.mask)


def test_override_validation():
    with pytest.raises(ValidationError):
        Overrides(preservation_scale=1.5)
    with pytest.raises(ValidationError):
        Overrides(caption="   ")
    with pytest.raises(ValidationError):
        Overrides(blur_radius=-1)


def test_apply_overrides_mask_size_checked(two_shape_scene):
    from maskedit.instructor import build_plan

    image = two_shape_scene.render()
    plan = build_plan("remove the red circle", image,
                      make_stub_clients(two_shape_scene))
    with pytest.raises(ValidationError):
        apply_overrides(plan, Overrides(mask=np.ones((4, 4))))
    swapped = apply_overrides(plan, Overrides(caption="new caption"))
    assert swapped.target_caption == "new caption"
    assert np.array_equal(swapped.mask, plan.mask)
    assert plan.target_caption != "new caption"  # original untouched


def test_failed_round_recorded_with_diagnostics(tmp_path, small_bundle,
                                                two_shape_scene, scene_image):
    bundle = build_toy_bundle(seed=1, hidden=8, total_steps=200,
                              cond_dim=16, time_dim=8)
    bundle.branch = BranchNetwork(channels=3, widths=(4, 4, 3), time_dim=8)
    conductor = Conductor(SessionStore(tmp_path / "f"), bundle,
                          clients=make_stub_clients(two_shape_scene))
    session = conductor.create_session(scene_image)
    ref, _ = conductor.plan(session.id, "remove the red circle")
    plan = conductor.store.load_plan(ref)
    rnd = conductor.execute_plan(session.id, plan, plan_ref=ref,
                                 scfg=SamplerConfig(steps=2, seed=0))
    assert rnd.status == "failed"
    assert rnd.error["code"] == "model_error"
    loaded = conductor.get_session(session.id)
    assert loaded.rounds[0].status == "failed"  # retained, not rolled back
    follow = conductor.execute_plan(session.id, plan, plan_ref=ref,
                                    scfg=SamplerConfig(steps=2, seed=0))
    assert follow.index == 1
    assert follow.source_ref == session.source_ref  # failed round not chained


def test_journal_is_append_only_jsonl(conductor, scene_image):
    session, _, _ = _plan_and_round(conductor, scene_image,
                                    "remove the red circle")
    journal = conductor.store.root / "sessions" / session.id / "journal.jsonl"
    lines = journal.read_text().strip().splitlines()
    assert len(lines) == 2
    kinds = [json.loads(line)["kind"] for line in lines]
    assert kinds == ["session", "round"]


def test_artifact_refs_resolve_and_traversal_blocked(conductor, scene_image):
    session, _, rnd = _plan_and_round(conductor, scene_image,
                                      "remove the red circle")
    for ref in (session.source_ref, rnd.result_ref, rnd.mask_ref):
        assert conductor.store.resolve(ref).exists()
    with pytest.raises(ValidationError):
        conductor.store.resolve("../../etc/passwd")
