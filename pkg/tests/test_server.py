import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

import promptseg as ps
from promptseg.rle import decode
from promptseg.server import create_app

from conftest import tiny_config


def png_b64(rng, size=48):
    arr = (rng.random((size, size, 3)) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@pytest.fixture(scope="module")
def client():
    model = ps.SegModel(tiny_config(), seed=0)
    return TestClient(create_app(model, version="test-0"))


class TestMeta:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json()["status"] == "ok"

    def test_classes_lists_vocabulary_and_template(self, client):
        r = client.get("/classes")
        assert r.status_code == 200
        body = r.json()
        assert "circle" in body["classes"]
        assert "{}" in body["template"]
        assert "photo" not in body["classes"]


class TestSegment:
    def test_manual_mode_echoes_user_points(self, client, rng):
        points = [[5, 6], [20, 33]]
        r = client.post(
            "/segment",
            json={
                "image_b64": png_b64(rng),
                "class_text": "circle",
                "points": points,
                "mode": "manual",
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert body["points_used"] == points
        assert body["point_source"] == "user"
        mask = decode(body["mask_rle"], body["mask_height"], body["mask_width"])
        assert mask.shape == (48, 48)

    def test_semi_automatic_points_on_similarity_foreground(self, client, rng):
        r = client.post(
            "/segment",
            json={"image_b64": png_b64(rng), "class_text": "square", "seed": 3},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["mode"] == "semi_automatic"
        assert len(body["points_used"]) == 5
        sim = np.asarray(
            Image.open(io.BytesIO(base64.b64decode(body["similarity_b64"])))
        )
        if body["point_source"] == "similarity":
            # mask = normalized similarity >= 0.5, i.e. 128 in 8-bit
            for r_, c_ in body["points_used"]:
                assert sim[r_, c_] >= 127

    def test_identical_requests_identical_bytes(self, client, rng):
        payload = {"image_b64": png_b64(rng), "class_text": "circle", "seed": 7}
        a = client.post("/segment", json=payload)
        b = client.post("/segment", json=payload)
        assert a.content == b.content

    def test_stateless_interleaving(self, client, rng):
        pa = {"image_b64": png_b64(rng), "class_text": "circle", "seed": 1}
        pb = {"image_b64": png_b64(rng), "class_text": "square", "seed": 2}
        first = client.post("/segment", json=pa).content
        client.post("/segment", json=pb)
        second = client.post("/segment", json=pa).content
        assert first == second

    def test_unknown_class_lists_vocabulary(self, client, rng):
        r = client.post(
            "/segment", json={"image_b64": png_b64(rng), "class_text": "zebra"}
        )
        assert r.status_code == 422
        assert "circle" in r.json()["classes"]

    def test_malformed_image_is_400(self, client):
        r = client.post(
            "/segment", json={"image_b64": "definitely-not-base64!!", "class_text": "circle"}
        )
        assert r.status_code == 400

    def test_manual_requires_points(self, client, rng):
        r = client.post(
            "/segment",
            json={"image_b64": png_b64(rng), "class_text": "circle", "mode": "manual"},
        )
        assert r.status_code == 422

    def test_response_mask_dims_match_request_image(self, client, rng):
        r = client.post(
            "/segment", json={"image_b64": png_b64(rng, size=48), "class_text": "ring"}
        )
        body = r.json()
        assert (body["mask_height"], body["mask_width"]) == (48, 48)
