import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from maskedit import imageio
from maskedit.conductor import build_toy_bundle
from maskedit.instructor import make_stub_clients
from maskedit.scenes import ProceduralScene, ShapeSpec
from maskedit.service import create_app


@pytest.fixture()
def scene():
    return ProceduralScene(64, 64, "white", (
        ShapeSpec("circle", "red", 20, 20, 10),
        ShapeSpec("square", "blue", 46, 44, 9),
    ))


@pytest.fixture()
def client(tmp_path, scene):
    bundle = build_toy_bundle(seed=0, hidden=8, total_steps=200,
                              cond_dim=16, time_dim=8)
    app = create_app(tmp_path / "store", bundle=bundle,
                     clients=make_stub_clients(),
                     cors_origins=("http://ui.test",))
    with TestClient(app) as c:
        yield c


def _create_session(client, scene) -> str:
    png = imageio.image_to_png_bytes(scene.render())
    resp = client.post("/sessions", files={"image": ("scene.png", png, "image/png")})
    assert resp.status_code == 201
    return resp.json()["session_id"]


def test_create_session_and_fetch_source(client, scene):
    session_id = _create_session(client, scene)
    got = client.get(f"/sessions/{session_id}")
    assert got.status_code == 200
    body = got.json()
    assert body["rounds"] == []
    art = client.get(f"/artifacts/{body['source_ref']}")
    assert art.status_code == 200
    img = imageio.image_from_png_bytes(art.content)
    sent = imageio.image_from_png_bytes(imageio.image_to_png_bytes(scene.render()))
    assert np.array_equal(img, sent)


def test_create_session_via_base64(client, scene):
    png = imageio.image_to_png_bytes(scene.render())
    resp = client.post("/sessions", json={"image_b64": imageio.b64_encode(png)})
    assert resp.status_code == 201


def test_plan_endpoint_returns_removal_plan(client, scene):
    session_id = _create_session(client, scene)
    resp = client.post(f"/sessions/{session_id}/plan",
                       json={"instruction": "remove the red circle"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["plan"]["edit_type"] == "removal"
    assert body["plan"]["target_object"] == "red circle"
    mask = imageio.load_mask(client.app.state.store.resolve(
        body["plan"]["mask_ref"]))
    assert np.array_equal(mask, scene.shape_mask(0))


def test_round_execution_and_artifacts(client, scene):
    session_id = _create_session(client, scene)
    plan_ref = client.post(f"/sessions/{session_id}/plan",
                           json={"instruction": "remove the red circle"}
                           ).json()["plan_ref"]
    resp = client.post(f"/sessions/{session_id}/rounds",
                       json={"plan_ref": plan_ref, "seed": 3, "steps": 4,
                             "blur_radius": 0})
    assert resp.status_code == 200
    rnd = resp.json()
    assert rnd["status"] == "done"
    assert rnd["denoiser_evals"] == 8
    for ref in (rnd["result_ref"], rnd["mask_ref"]):
        assert client.get(f"/artifacts/{ref}").status_code == 200


def test_round_rejects_out_of_range_scale(client, scene):
    session_id = _create_session(client, scene)
    plan_ref = client.post(f"/sessions/{session_id}/plan",
                           json={"instruction": "remove the red circle"}
                           ).json()["plan_ref"]
    resp = client.post(f"/sessions/{session_id}/rounds",
                       json={"plan_ref": plan_ref, "w": 2.0})
    assert resp.status_code == 422
    body = resp.json()
    assert body["code"] == "validation"


def test_manual_round_with_inline_plan(client, scene):
    session_id = _create_session(client, scene)
    mask = np.zeros((64, 64))
    mask[10:30, 10:30] = 1.0
    plan = {
        "edit_type": "local_edit",
        "target_object": "manual region",
        "mask_ref": "data:image/png;base64,"
                    + imageio.b64_encode(imageio.mask_to_png_bytes(mask)),
        "target_caption": "a beige wall",
        "confidence": 0.0,
    }
    resp = client.post(f"/sessions/{session_id}/rounds",
                       json={"plan": plan, "steps": 3, "seed": 1})
    assert resp.status_code == 200
    rnd = resp.json()
    assert rnd["status"] == "done"
    assert rnd["plan_ref"] == "<manual>"

    missing = client.post(f"/sessions/{session_id}/rounds", json={"steps": 3})
    assert missing.status_code == 422


def test_unknown_session_is_404_api_error(client):
    resp = client.get("/sessions/nope")
    assert resp.status_code == 404
    assert resp.json()["code"] == "not_found"


def test_not_found_detection_carries_stage(client, scene):
    session_id = _create_session(client, scene)
    resp = client.post(f"/sessions/{session_id}/plan",
                       json={"instruction": "remove the unicorn"})
    assert resp.status_code == 404
    body = resp.json()
    assert body["code"] == "not_found"
    assert body["stage"] == "locate_target"


def test_every_referenced_artifact_fetchable(client, scene):
    session_id = _create_session(client, scene)
    plan_ref = client.post(f"/sessions/{session_id}/plan",
                           json={"instruction": "remove the red circle"}
                           ).json()["plan_ref"]
    client.post(f"/sessions/{session_id}/rounds",
                json={"plan_ref": plan_ref, "steps": 3})
    body = client.get(f"/sessions/{session_id}").json()
    refs = [body["source_ref"]]
    for rnd in body["rounds"]:
        refs += [rnd[k] for k in ("result_ref", "mask_ref", "source_ref") if rnd.get(k)]
    for ref in refs:
        assert client.get(f"/artifacts/{ref}").status_code == 200, ref


def test_artifact_traversal_rejected(client):
    resp = client.get("/artifacts/../../etc/passwd")
    assert resp.status_code in (404, 422)


def test_two_servers_same_store_identical_gets(tmp_path, scene):
    bundle = build_toy_bundle(seed=0, hidden=8, total_steps=200,
                              cond_dim=16, time_dim=8)
    store_dir = tmp_path / "shared"
    app_a = create_app(store_dir, bundle=bundle, clients=make_stub_clients())
    app_b = create_app(store_dir, bundle=bundle, clients=make_stub_clients())
    with TestClient(app_a) as a, TestClient(app_b) as b:
        session_id = _create_session(a, scene)
        plan_ref = a.post(f"/sessions/{session_id}/plan",
                          json={"instruction": "remove the red circle"}
                          ).json()["plan_ref"]
        a.post(f"/sessions/{session_id}/rounds",
               json={"plan_ref": plan_ref, "steps": 3})
        ga = a.get(f"/sessions/{session_id}")
        gb = b.get(f"/sessions/{session_id}")
        assert ga.json() == gb.json()
        ref = ga.json()["rounds"][0]["result_ref"]
        assert a.get(f"/artifacts/{ref}").content == b.get(f"/artifacts/{ref}").content


def test_cors_header_present(client, scene):
    resp = client.options("/sessions", headers={
        "origin": "http://ui.test",
        "access-control-request-method": "POST",
    })
    assert resp.headers.get("access-control-allow-origin") == "http://ui.test"


def test_bench_endpoint(client, tmp_path):
    from maskedit.scenes import synth_dataset

    scenes = synth_dataset(np.random.default_rng(0), 2, size=48)
    items = []
    for i, sc in enumerate(scenes):
        imageio.save_image(tmp_path / f"b{i}.png", sc.render())
        imageio.save_mask(tmp_path / f"bm{i}.png", sc.shape_mask(0))
        items.append({"image_path": f"b{i}.png", "mask_path": f"bm{i}.png",
                      "caption": sc.caption(), "split": "inside"})
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"name": "svc", "items": items}))
    resp = client.post("/bench/run", json={"manifest_path": str(manifest),
                                           "steps": 2})
    assert resp.status_code == 200
    body = resp.json()
    assert body["n_failed"] == 0
    assert body["summary"][-1]["n"] == 2
