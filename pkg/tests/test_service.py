"""HTTP endpoints: schema, determinism, error codes, CLI byte parity."""
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from gaga.camera import orbit_camera
from gaga.fitting import make_ground_truth_avatar
from gaga.head_model import generate_toy_model
from gaga.io_formats import save_avatar
from gaga.service import create_app


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    model = generate_toy_model(7, num_vertices=64)
    cam = orbit_camera(0.0, 0.0, 2.6, 35.0, 64)
    avatar = make_ground_truth_avatar(model, cam, grid_res=32, seed=2)
    path = tmp_path_factory.mktemp("svc") / "avatar.gaga"
    save_avatar(avatar, model, path)
    return avatar, model, path


@pytest.fixture(scope="module")
def client(setup):
    avatar, model, _ = setup
    return TestClient(create_app(avatar=avatar, model=model, max_resolution=256))


def _png_to_array(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def test_meta_schema(client, setup):
    _, model, _ = setup
    r = client.get("/meta")
    assert r.status_code == 200
    meta = r.json()
    nb, nt, np_ = model.dims
    assert meta["api"] == 1
    assert meta["vertex_count"] == model.num_vertices
    assert meta["n_beta"] == nb and meta["n_theta"] == nt and meta["n_psi"] == np_
    assert meta["slider_range"] == [-3.0, 3.0]
    assert meta["resolutions"] == [128, 256]  # capped by max_resolution=256
    assert meta["decoder_mode"] == "affine"
    assert meta["grid_res"] == 32
    assert isinstance(meta["avatar_id"], str) and meta["avatar_id"]


def test_meta_stable(client):
    assert client.get("/meta").json() == client.get("/meta").json()


def test_meta_without_avatar():
    bare = TestClient(create_app())
    assert bare.get("/meta").status_code == 503
    assert bare.post("/render", json={}).status_code == 503


def test_render_returns_png_with_timing(client):
    r = client.post("/render", json={"yaw": 10.0, "resolution": 64})
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert float(r.headers["X-Render-Ms"]) > 0
    arr = _png_to_array(r.content)
    assert arr.shape == (64, 64, 3)
    assert arr.max() > 0


def test_render_deterministic(client):
    body = {"yaw": -25.0, "pitch": 5.0, "resolution": 64, "psi": [0.5] * 32}
    a = client.post("/render", json=body)
    b = client.post("/render", json=body)
    assert a.content == b.content


def test_render_responds_to_inputs(client):
    base = client.post("/render", json={"resolution": 64}).content
    yawed = client.post("/render", json={"resolution": 64, "yaw": 20.0}).content
    psi = [0.0] * 32
    psi[0] = 2.5
    poked = client.post("/render", json={"resolution": 64, "psi": psi}).content
    assert yawed != base
    assert poked != base


def test_render_matches_cli_bytes(client, setup):
    _, _, avatar_path = setup
    from click.testing import CliRunner
    from gaga.cli import cli

    runner = CliRunner()
    with runner.isolated_filesystem():
        result = runner.invoke(cli, [
            "render", "--avatar", str(avatar_path), "--yaw", "15", "--pitch",
            "-4", "--resolution", "64", "--psi", "0:1.0,3:-0.5", "--out",
            "frame.png"])
        assert result.exit_code == 0, result.output
        cli_bytes = open("frame.png", "rb").read()

    psi = [0.0] * 32
    psi[0], psi[3] = 1.0, -0.5
    r = client.post("/render", json={"yaw": 15.0, "pitch": -4.0,
                                     "resolution": 64, "psi": psi})
    assert r.content == cli_bytes


def test_silhouette_centroid_tracks_yaw(client):
    # Orbiting the camera sweeps the projected head across the frame; the
    # mask centroid must move strictly in one direction.
    cents = []
    for yaw in np.linspace(-45.0, 45.0, 7):
        r = client.post("/render", json={"yaw": float(yaw), "resolution": 64})
        arr = _png_to_array(r.content)
        mask = arr.sum(axis=2) > 0.05
        xs = np.arange(64)
        cents.append(float((mask.sum(axis=0) * xs).sum() / mask.sum()))
    steps = np.diff(cents)
    assert np.all(steps > 0.01) or np.all(steps < -0.01), cents


def test_resolution_bounds(client):
    r = client.post("/render", json={"resolution": 512})  # above max 256
    assert r.status_code == 400
    assert r.json()["detail"][0]["field"] == "resolution"
    assert client.post("/render", json={"resolution": 8}).status_code == 400


def test_distance_and_fov_bounds(client):
    r = client.post("/render", json={"distance": 0.01})
    assert r.status_code == 400
    assert r.json()["detail"][0]["field"] == "distance"
    r = client.post("/render", json={"fov": 0.2})
    assert r.status_code == 400
    assert r.json()["detail"][0]["field"] == "fov"


def test_expression_length_mismatch(client):
    r = client.post("/render", json={"psi": [0.0] * 5, "resolution": 64})
    assert r.status_code == 422
    assert r.json()["detail"][0]["field"] == "psi"
    r = client.post("/render", json={"theta": [0.0] * 99, "resolution": 64})
    assert r.status_code == 422
    assert r.json()["detail"][0]["field"] == "theta"


def test_decoder_upgrade_rejected(client):
    # The avatar carries affine weights only; conv needs weights it lacks.
    r = client.post("/render", json={"decoder": "conv", "resolution": 64})
    assert r.status_code == 422
    assert r.json()["detail"][0]["field"] == "decoder"


def test_decoder_noop_override_accepted(client):
    base = client.post("/render", json={"resolution": 64})
    same = client.post("/render", json={"resolution": 64, "decoder": "affine"})
    assert same.status_code == 200
    assert same.content == base.content


def test_malformed_body_field_messages(client):
    r = client.post("/render", json={"yaw": "sideways"})
    assert r.status_code == 400
    detail = r.json()["detail"]
    assert any(d["field"] == "yaw" for d in detail)
