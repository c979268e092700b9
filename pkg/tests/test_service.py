import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from segwild import sceneio
from segwild.evalbench import SyntheticSpec, mask_from_scene, \
    write_synthetic_dataset
from segwild.segmenter import PromptSet, segment
from segwild.service import create_app


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    spec = SyntheticSpec(rng_seed=4, n_cameras=3, image_size=40)
    spec.clusters[0].count = 6
    spec.clusters[1].count = 6
    write_synthetic_dataset(spec, root / "ds")
    # bake ground-truth affinities so segmentation is meaningful
    scene = sceneio.load_scene(root / "ds" / "scene.ply")
    labels = json.loads((root / "ds" / "labels.json").read_text())["labels"]
    onehot = np.eye(2)[np.asarray(labels)]
    sceneio.save_scene(scene.with_affinities(onehot), root / "trained.ply")
    return root


@pytest.fixture()
def client(dataset):
    app = create_app(data_root=dataset)
    with TestClient(app) as c:
        yield c


def load_and_register(client, dataset):
    r = client.post("/scene/load", json={"path": "trained.ply"})
    assert r.status_code == 200
    r = client.post("/cameras", json={"name": "v0",
                                      "path": "ds/views/view_000.camera.json"})
    assert r.status_code == 200


class TestBasics:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert "version" in body

    def test_scene_load_missing_gives_404_code(self, client):
        r = client.post("/scene/load", json={"path": "nope.ply"})
        assert r.status_code == 404
        assert r.json()["detail"]["code"] == "scene_not_found"

    def test_scene_load_reports_size(self, client, dataset):
        r = client.post("/scene/load", json={"path": "trained.ply"})
        body = r.json()
        assert body["n_gaussians"] == 12
        assert body["trained"] is True

    def test_render_requires_scene(self, client):
        r = client.post("/cameras", json={"name": "v0",
                                          "path": "ds/views/view_000.camera.json"})
        r = client.get("/render", params={"camera": "v0"})
        assert r.status_code == 409

    def test_metrics(self, client, dataset):
        load_and_register(client, dataset)
        client.get("/render", params={"camera": "v0"})
        m = client.get("/metrics").json()
        assert m["renders"] >= 1
        assert m["sessions"] >= 1


class TestRender:
    @pytest.mark.parametrize("mode", ["color", "feature_pca", "depth"])
    def test_modes_return_png(self, client, dataset, mode):
        load_and_register(client, dataset)
        r = client.get("/render", params={"camera": "v0", "mode": mode})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(r.content))
        assert img.size == (40, 40)

    def test_inline_pose_render(self, client, dataset):
        load_and_register(client, dataset)
        cam = json.loads(
            (dataset / "ds/views/view_001.camera.json").read_text())
        r = client.post("/render", json={"camera": cam, "mode": "color"})
        assert r.status_code == 200
        assert Image.open(io.BytesIO(r.content)).size == (40, 40)

    def test_bad_camera_rejected(self, client, dataset):
        load_and_register(client, dataset)
        r = client.get("/render", params={"camera": "missing"})
        assert r.status_code == 404
        assert r.json()["detail"]["code"] == "camera_not_found"


class TestSegmentFlow:
    def _segment(self, client, dataset, tau=0.5, use_sgc=False):
        load_and_register(client, dataset)
        manifest = json.loads((dataset / "ds/manifest.json").read_text())
        case = manifest["cases"][0]
        r = client.post("/prompts", json={"camera": "v0",
                                          "points": case["prompts"]})
        assert r.status_code == 200
        pid = r.json()["prompt_set_id"]
        r = client.post("/segment", json={"prompt_set": pid, "tau": tau,
                                          "use_sgc": use_sgc,
                                          "mask_source": {"type": "none"}})
        assert r.status_code == 200
        return r.json(), case

    def test_segment_and_mask_matches_library(self, client, dataset):
        body, case = self._segment(client, dataset)
        sid = body["segmentation_id"]
        r = client.get(f"/segmentation/{sid}/mask.png")
        assert r.status_code == 200

        scene = sceneio.load_scene(dataset / "trained.ply")
        cam = sceneio.load_camera(dataset / "ds/views/view_000.camera.json")
        prompts = PromptSet(view=cam,
                            points=[tuple(p) for p in case["prompts"]])
        result = segment(scene, prompts, 0.5)
        assert sorted(body["indices"]) == sorted(int(i) for i in result.selected)
        expected = mask_from_scene(scene.subset(result.selected), cam)
        buf = io.BytesIO()
        Image.fromarray(np.where(expected, 255, 0).astype(np.uint8), "L") \
            .save(buf, "PNG")
        assert r.content == buf.getvalue()

    def test_segmentation_json_schema(self, client, dataset):
        body, _ = self._segment(client, dataset)
        r = client.get(f"/segmentation/{body['segmentation_id']}.json")
        doc = r.json()
        for key in ("indices", "tau", "prompt_view", "n_prompts"):
            assert key in doc

    def test_tau_monotonicity_over_http(self, client, dataset):
        load_and_register(client, dataset)
        manifest = json.loads((dataset / "ds/manifest.json").read_text())
        pid = client.post("/prompts", json={
            "camera": "v0",
            "points": manifest["cases"][0]["prompts"]}).json()["prompt_set_id"]
        selected = {}
        for tau in (0.3, 0.6, 0.9):
            body = client.post("/segment", json={
                "prompt_set": pid, "tau": tau,
                "mask_source": {"type": "none"}}).json()
            selected[tau] = set(body["indices"])
        assert selected[0.9] <= selected[0.6] <= selected[0.3]

    def test_polygon_mask_source(self, client, dataset):
        load_and_register(client, dataset)
        manifest = json.loads((dataset / "ds/manifest.json").read_text())
        pid = client.post("/prompts", json={
            "camera": "v0",
            "points": manifest["cases"][0]["prompts"]}).json()["prompt_set_id"]
        body = client.post("/segment", json={
            "prompt_set": pid, "tau": 0.5,
            "mask_source": {"type": "polygon",
                            "points": [[0, 0], [39, 0], [39, 39], [0, 39]]},
        }).json()
        assert body["mask_source"] == "polygon"

    def test_bank_mask_source_and_sgc(self, client, dataset):
        load_and_register(client, dataset)
        manifest = json.loads((dataset / "ds/manifest.json").read_text())
        case = manifest["cases"][0]
        pid = client.post("/prompts", json={
            "camera": "v0", "points": case["prompts"]}).json()["prompt_set_id"]
        body = client.post("/segment", json={
            "prompt_set": pid, "tau": 0.5, "use_sgc": True,
            "mask_source": {"type": "bank",
                            "manifest": "ds/views/view_000.masks/manifest.json"},
        }).json()
        assert body["use_sgc"] is True
        assert "n_cut" in body and "n_dropped" in body

    def test_sgc_without_mask_rejected(self, client, dataset):
        load_and_register(client, dataset)
        manifest = json.loads((dataset / "ds/manifest.json").read_text())
        pid = client.post("/prompts", json={
            "camera": "v0",
            "points": manifest["cases"][0]["prompts"]}).json()["prompt_set_id"]
        r = client.post("/segment", json={"prompt_set": pid, "use_sgc": True,
                                          "mask_source": {"type": "none"}})
        assert r.status_code == 422
        assert r.json()["detail"]["code"] == "sgc_needs_mask"

    def test_export(self, client, dataset, tmp_path):
        body, _ = self._segment(client, dataset)
        out = tmp_path / "sub.ply"
        r = client.post("/export", json={"segmentation_id":
                                         body["segmentation_id"],
                                         "path": str(out)})
        assert r.status_code == 200
        sub = sceneio.load_scene(out)
        assert len(sub) == len(body["indices"])

    def test_overlay_render(self, client, dataset):
        body, _ = self._segment(client, dataset)
        r = client.get("/render", params={"camera": "v0", "mode": "overlay",
                                          "segmentation":
                                          body["segmentation_id"]})
        assert r.status_code == 200


class TestTrainJob:
    def test_train_lifecycle(self, client, dataset):
        import time
        client.post("/scene/load", json={"path": "ds/scene.ply"})
        r = client.post("/train", json={"data": "ds", "iterations": 3,
                                        "pairs_per_iter": 16})
        assert r.status_code == 200
        job_id = r.json()["job_id"]
        for _ in range(200):
            status = client.get(f"/train/{job_id}").json()
            if status["status"] != "running":
                break
            time.sleep(0.05)
        assert status["status"] == "done"
        assert status["iterations_done"] == 3
        assert client.get("/state").json()["trained"] is True

    def test_train_bad_data_dir(self, client, dataset):
        client.post("/scene/load", json={"path": "ds/scene.ply"})
        r = client.post("/train", json={"data": "missing", "iterations": 1})
        assert r.status_code == 404


class TestDeadlineAndDefaults:
    def test_render_deadline_enforced(self, dataset):
        app = create_app(data_root=dataset, render_deadline_s=1e-4)
        with TestClient(app) as client:
            load_and_register(client, dataset)
            # 512x512 render + PNG encode takes milliseconds, far past the
            # 0.1 ms deadline
            cam = json.loads(
                (dataset / "ds/views/view_000.camera.json").read_text())
            cam.update({"width": 512, "height": 512, "cx": 256.0,
                        "cy": 256.0, "fx": 512.0, "fy": 512.0})
            r = client.post("/render", json={"camera": cam, "mode": "color"})
            assert r.status_code == 504
            assert r.json()["detail"]["code"] == "render_deadline_exceeded"

    def test_session_tau_default_used(self, dataset):
        app = create_app(data_root=dataset, tau_default=0.999999)
        with TestClient(app) as client:
            load_and_register(client, dataset)
            pid = client.post("/prompts", json={
                "camera": "v0", "points": [[20.0, 20.0]]}).json()["prompt_set_id"]
            # tau omitted: near-1 default selects nothing
            body = client.post("/segment", json={
                "prompt_set": pid,
                "mask_source": {"type": "none"}}).json()
            assert body["indices"] == []
            assert body["tau"] == pytest.approx(0.999999)


class TestState:
    def test_state_round_trip(self, client, dataset):
        load_and_register(client, dataset)
        pid = client.post("/prompts", json={
            "camera": "v0", "points": [[5.0, 6.0]]}).json()["prompt_set_id"]
        state = client.get("/state").json()
        assert state["n_gaussians"] == 12
        assert "v0" in state["cameras"]
        assert state["prompt_sets"][pid]["points"] == [[5.0, 6.0]]

    def test_session_isolation(self, client, dataset):
        sid = client.post("/session").json()["session_id"]
        r = client.post("/scene/load", json={"path": "trained.ply",
                                             "session_id": sid})
        assert r.status_code == 200
        default_state = client.get("/state").json()
        assert default_state["n_gaussians"] == 0
        other = client.get("/state", params={"session_id": sid}).json()
        assert other["n_gaussians"] == 12
