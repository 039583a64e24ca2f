import base64
import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from conftest import blob_image, checker_image
from styleforge import imageio
from styleforge.schemas import JobConfig
from styleforge.service import create_app, get_cached_model


def b64(image) -> dict:
    return {"data": base64.b64encode(imageio.encode_png(image)).decode("ascii")}


def b64_mask(mask) -> dict:
    grey = (np.clip(mask, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(grey, mode="L").save(buf, format="PNG")
    return {"data": base64.b64encode(buf.getvalue()).decode("ascii")}


def wait_for(client, job_id, timeout=180.0) -> dict:
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/jobs/{job_id}")
        assert status.status_code == 200
        body = status.json()
        if body["state"] in ("done", "failed"):
            return body
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} did not finish within {timeout}s")


def submit(client, job: dict) -> str:
    resp = client.post("/jobs", json=job)
    assert resp.status_code == 202, resp.text
    return resp.json()["job_id"]


def decode_png_response(resp) -> np.ndarray:
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    return imageio.decode_image(resp.content)


@pytest.fixture(scope="module")
def client(model_path):
    app = create_app(model_path=str(model_path))
    with TestClient(app) as c:
        yield c


@pytest.fixture()
def base_job(content_96, style_96):
    return {
        "mode": "transfer",
        "content": b64(content_96),
        "styles": [{"image": b64(style_96)}],
        "optimizer": {"max_iterations": 3},
    }


class TestInfoEndpoints:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        import styleforge

        assert body["version"] == styleforge.__version__

    def test_model_info(self, client, model_path):
        body = client.get("/model").json()
        assert body["path"] == str(model_path)
        assert body["pooling"] == "average"
        assert body["channel_order"] == "rgb"
        assert len(body["channel_means"]) == 3
        assert len(body["conv_layers"]) == 13
        assert body["conv_layers"][0] == "conv1_1"

    def test_model_info_without_default(self, monkeypatch):
        monkeypatch.delenv("STYLE_MODEL_PATH", raising=False)
        with TestClient(create_app()) as c:
            resp = c.get("/model")
        assert resp.status_code == 404
        assert "configured" in resp.json()["detail"]

    def test_model_cache_reuses_loads(self, model_path):
        a = get_cached_model(str(model_path), "average")
        b = get_cached_model(str(model_path), "average")
        assert a is b
        c = get_cached_model(str(model_path), "max")
        assert c is not a and c.pooling == "max"


class TestTransferJobs:
    def test_job_lifecycle(self, client, base_job):
        job_id = submit(client, base_job)
        status = wait_for(client, job_id)
        assert status["state"] == "done"
        assert status["error"] is None
        report = status["report"]
        assert report["settings"]["mode"] == "transfer"
        assert report["settings"]["pooling"] == "average"
        records = report["iterations"]
        assert len(records) >= 1
        assert {"iter", "total", "terms", "step", "grad_norm"} <= set(records[-1])
        assert set(records[-1]["terms"]) == {"content", "style"}

    def test_result_png(self, client, base_job, content_96):
        job_id = submit(client, base_job)
        wait_for(client, job_id)
        image = decode_png_response(client.get(f"/jobs/{job_id}/result"))
        assert image.shape == content_96.shape
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_path_references_read_on_the_service_side(self, client, content_96, style_96, tmp_path):
        imageio.save_image(tmp_path / "c.png", content_96)
        imageio.save_image(tmp_path / "s.png", style_96)
        job = {
            "mode": "transfer",
            "content": {"path": str(tmp_path / "c.png")},
            "styles": [{"image": {"path": str(tmp_path / "s.png")}}],
            "optimizer": {"max_iterations": 1},
        }
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"

    def test_per_job_pooling_override(self, client, base_job):
        job = dict(base_job, pooling="max", optimizer={"max_iterations": 1})
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        assert status["report"]["settings"]["pooling"] == "max"

    def test_unknown_job_404(self, client):
        assert client.get("/jobs/doesnotexist").status_code == 404
        assert client.get("/jobs/doesnotexist/result").status_code == 404

    def test_result_before_done_409(self, client, base_job):
        # A job placed in the registry but never submitted stays queued.
        job = client.app.state.registry.create(JobConfig.model_validate(base_job))
        resp = client.get(f"/jobs/{job.job_id}/result")
        assert resp.status_code == 409
        assert "not ready" in resp.json()["detail"]

    def test_failed_job_reports_error(self, client, base_job):
        job = dict(base_job, model_path="/nonexistent/weights.sfw1")
        status = wait_for(client, submit(client, job))
        assert status["state"] == "failed"
        assert status["error"]["type"] == "FileNotFoundError"
        resp = client.get(f"/jobs/{status['job_id']}/result")
        assert resp.status_code == 409
        assert "failed" in resp.json()["detail"]

    def test_invalid_config_rejected_up_front(self, client, base_job):
        bad = dict(base_job)
        bad["styles"] = []
        assert client.post("/jobs", json=bad).status_code == 422
        bad = dict(base_job, extra_field=1)
        assert client.post("/jobs", json=bad).status_code == 422

    def test_bad_base64_fails_the_job(self, client, base_job):
        job = dict(base_job, content={"data": "###not-base64###"})
        status = wait_for(client, submit(client, job))
        assert status["state"] == "failed"
        assert status["error"]["type"] == "ImageFileError"

    def test_env_var_provides_default_model(self, model_path, base_job, monkeypatch):
        monkeypatch.setenv("STYLE_MODEL_PATH", str(model_path))
        app = create_app()
        with TestClient(app) as c:
            status = wait_for(c, submit(c, dict(base_job, optimizer={"max_iterations": 1})))
        assert status["state"] == "done"

    def test_no_model_anywhere_fails_clearly(self, base_job, monkeypatch):
        monkeypatch.delenv("STYLE_MODEL_PATH", raising=False)
        app = create_app()
        with TestClient(app) as c:
            status = wait_for(c, submit(c, base_job))
        assert status["state"] == "failed"
        assert status["error"]["type"] == "ConfigurationError"
        assert "STYLE_MODEL_PATH" in status["error"]["message"]


class TestModeDispatch:
    def test_spatial_job(self, client, content_96, style_96):
        left = np.zeros((96, 96)); left[:, :48] = 1.0
        right = 1.0 - left
        job = {
            "mode": "spatial",
            "content": b64(content_96),
            "content_masks": {"l": b64_mask(left), "r": b64_mask(right)},
            "styles": [{"image": b64(style_96), "masks": {"l": b64_mask(left), "r": b64_mask(right)}}],
            "settings": {"guidance_mode": "simple"},
            "optimizer": {"max_iterations": 2},
        }
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        assert status["report"]["settings"]["mode"] == "spatial"
        assert set(status["report"]["iterations"][-1]["terms"]) == {"content", "guided_style"}

    def test_color_preserve_luminance(self, client, base_job):
        job = dict(base_job, mode="color-preserve", color={"mode": "luminance"})
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        assert status["report"]["settings"]["mode"] == "luminance"

    def test_color_preserve_match(self, client, base_job):
        job = dict(base_job, mode="color-preserve", color={"mode": "match", "method": "cholesky"})
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        assert status["report"]["settings"]["color_method"] == "cholesky"

    def test_mix_style_without_content(self, client, content_96, style_96):
        job = {
            "mode": "mix-style",
            "mix": {"fine": b64(style_96), "coarse": b64(content_96)},
            "optimizer": {"max_iterations": 2},
        }
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        assert status["report"] is None
        assert status["mix_report"]["settings"]["mode"] == "mix_style"
        result = decode_png_response(client.get(f"/jobs/{status['job_id']}/result"))
        mixed = decode_png_response(client.get(f"/jobs/{status['job_id']}/mixed-style"))
        np.testing.assert_array_equal(result, mixed)

    def test_mix_style_with_content(self, client, content_96, style_96):
        job = {
            "mode": "mix-style",
            "content": b64(content_96),
            "mix": {"fine": b64(style_96), "coarse": b64(content_96)},
            "optimizer": {"max_iterations": 2},
        }
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        assert status["report"]["settings"]["mode"] == "mix_style"
        assert status["mix_report"] is not None

    def test_mixed_style_endpoint_is_mix_only(self, client, base_job):
        job_id = submit(client, base_job)
        wait_for(client, job_id)
        assert client.get(f"/jobs/{job_id}/mixed-style").status_code == 404

    def test_highres_job_reports_stages(self, client, content_96, style_96):
        job = {
            "mode": "highres",
            "content": b64(content_96),
            "styles": [{"image": b64(style_96)}],
            "highres": {"budget_pixels": 96 * 96 // 4, "refinement_iterations": 1},
            "optimizer": {"max_iterations": 2},
        }
        status = wait_for(client, submit(client, job))
        assert status["state"] == "done"
        stages = status["stages"]
        assert [s["reduction_factor"] for s in stages] == [2, 1]
        assert stages[0]["size"] == [48, 48]
        assert stages[1]["size"] == [96, 96]
        assert stages[1]["iterations"] == 1
        assert status["report"]["settings"]["stage"] == 1
