import base64
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from cbstyle.image import Frame
from cbstyle.pipeline import write_frame_dir
from cbstyle.service import (
    RunConfig,
    StylingService,
    create_app,
    load_run_config,
    resolve_seg_model,
    resolve_style_model,
)
from cbstyle.stubs import ConstantStyleStub, FullFrameSegStub, IdentityStyleStub
from conftest import random_frame

RED = (255, 0, 0)
BLUE = (0, 0, 255)


def _png_color(data: bytes) -> tuple:
    with Image.open(io.BytesIO(data)) as img:
        arr = np.asarray(img.convert("RGB"))
    colors = np.unique(arr.reshape(-1, 3), axis=0)
    assert colors.shape[0] == 1, "expected a solid-color frame"
    return tuple(int(v) for v in colors[0])


@pytest.fixture
def stub_config(tmp_path, rng):
    frames = [random_frame(rng, 16, 16) for _ in range(4)]
    write_frame_dir(frames, tmp_path / "frames")
    return RunConfig(
        seg_model="stub:full:1:2",
        styles={
            "red": "stub:constant:1.0,0.0,0.0",
            "blue": "stub:constant:0.0,0.0,1.0",
            "ident": "stub:identity",
        },
        frames=str(tmp_path / "frames"),
        assignment={1: "red"},
        max_fps=40.0,
    )


@pytest.fixture
def client(stub_config):
    service = StylingService(stub_config)
    app = create_app(service)
    with TestClient(app) as c:
        c.service = service
        yield c


class TestResolvers:
    def test_identity_stub(self, rng):
        frame = random_frame(rng, 8, 8)
        model = resolve_style_model("stub:identity")
        assert np.array_equal(model.stylize(frame).pixels, frame.pixels)

    def test_constant_stub(self, rng):
        model = resolve_style_model("stub:constant:0.5,0.25,1.0")
        out = model.stylize(random_frame(rng, 4, 4))
        assert tuple(out.pixels[0, 0]) == (0.5, 0.25, 1.0)

    def test_full_seg_stub(self, rng):
        model = resolve_seg_model("stub:full:1:3")
        probs = model.predict(random_frame(rng, 4, 4))
        assert probs.shape == (4, 4, 3)
        assert (probs.argmax(axis=2) == 1).all()

    def test_unknown_stub_rejected(self):
        with pytest.raises(ValueError, match="unknown style stub"):
            resolve_style_model("stub:sparkles")
        with pytest.raises(ValueError, match="unknown segmentation stub"):
            resolve_seg_model("stub:sparkles")


class TestRunConfig:
    def test_load_validates_assignment_styles(self, tmp_path, stub_config):
        raw = {
            "schema": 1,
            "seg_model": stub_config.seg_model,
            "styles": dict(stub_config.styles),
            "frames": stub_config.frames,
            "assignment": {"1": "ghost"},
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="ghost"):
            load_run_config(path)

    def test_load_checks_frame_dir(self, tmp_path, stub_config):
        raw = {
            "schema": 1,
            "seg_model": stub_config.seg_model,
            "styles": dict(stub_config.styles),
            "frames": str(tmp_path / "missing"),
            "assignment": {},
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(FileNotFoundError, match="frames"):
            load_run_config(path)

    def test_corrupt_config_rejected(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{nope")
        with pytest.raises(ValueError, match="corrupt"):
            load_run_config(path)

    def test_round_trip(self, tmp_path, stub_config):
        raw = {
            "schema": 1,
            "seg_model": stub_config.seg_model,
            "styles": dict(stub_config.styles),
            "frames": stub_config.frames,
            "assignment": {"1": "red"},
            "mode": "sequential",
            "port": 9999,
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(raw))
        config = load_run_config(path)
        assert config.mode == "sequential"
        assert config.port == 9999
        assert config.assignment == {1: "red"}


class TestApi:
    def test_classes(self, client):
        data = client.get("/api/classes").json()
        assert data["schema"] == 1
        assert data["classes"] == [
            {"id": 0, "name": "class0"},
            {"id": 1, "name": "class1"},
        ]

    def test_styles_carry_thumbnails(self, client):
        data = client.get("/api/styles").json()
        ids = [s["id"] for s in data["styles"]]
        assert ids == ["blue", "ident", "red"]
        for style in data["styles"]:
            prefix = "data:image/png;base64,"
            assert style["thumbnail"].startswith(prefix)
            png = base64.b64decode(style["thumbnail"][len(prefix):])
            if style["id"] == "red":
                assert _png_color(png) == RED

    def test_assignment_round_trip(self, client):
        response = client.put(
            "/api/assignment", json={"schema": 1, "entries": {"1": "blue", "0": "ident"}}
        )
        assert response.status_code == 200
        data = client.get("/api/assignment").json()
        assert data["entries"] == {"0": "ident", "1": "blue"}

    def test_put_unknown_style_is_422_and_keeps_previous(self, client):
        before = client.get("/api/assignment").json()["entries"]
        response = client.put("/api/assignment", json={"schema": 1, "entries": {"1": "ghost"}})
        assert response.status_code == 422
        body = response.json()
        assert body["offending"] == {"class_id": "1", "style_id": "ghost"}
        assert client.get("/api/assignment").json()["entries"] == before

    def test_put_unknown_class_is_422(self, client):
        response = client.put("/api/assignment", json={"schema": 1, "entries": {"7": "red"}})
        assert response.status_code == 422
        assert "unknown class id" in response.json()["detail"]

    def test_put_non_integer_class_is_422(self, client):
        response = client.put("/api/assignment", json={"schema": 1, "entries": {"cat": "red"}})
        assert response.status_code == 422

    def test_put_bad_schema_is_422(self, client):
        response = client.put("/api/assignment", json={"schema": 99, "entries": {}})
        assert response.status_code == 422

    def test_stats_shape(self, client):
        data = client.get("/api/stats").json()
        assert data["schema"] == 1
        assert set(data["stage_means_ms"]) == {"t_seg", "t_style", "t_composite", "t_total"}


class TestStream:
    def test_frames_and_timings_alternate(self, client):
        with client.websocket_connect("/stream") as ws:
            for _ in range(3):
                png = ws.receive_bytes()
                timing = ws.receive_json()
                assert _png_color(png) == RED
                assert timing["type"] == "timing"
                assert timing["t_total"] >= 0.0

    def test_put_changes_colors_within_two_frames(self, client):
        with client.websocket_connect("/stream") as ws:
            png = ws.receive_bytes()
            ws.receive_json()
            assert _png_color(png) == RED

            produced_before = client.get("/api/stats").json()["frames_seen"]
            response = client.put("/api/assignment", json={"schema": 1, "entries": {"1": "blue"}})
            assert response.status_code == 200

            # every frame produced at least two after the switch must be blue
            seen_blue_index = None
            for _ in range(40):
                png = ws.receive_bytes()
                timing = ws.receive_json()
                color = _png_color(png)
                if timing["frame_index"] >= produced_before + 1:
                    assert color == BLUE
                    seen_blue_index = timing["frame_index"]
                    break
            assert seen_blue_index is not None

    def test_stats_fps_matches_streamed_timings(self, client):
        # capture past the stats window so both sides average steady-state
        # frames over (almost) the same 100-frame span
        intervals = []
        with client.websocket_connect("/stream") as ws:
            for _ in range(120):
                ws.receive_bytes()
                timing = ws.receive_json()
                intervals.append(timing["interval_ms"])
            stats = client.get("/api/stats").json()
        assert stats["window"] == 100
        fps_from_timings = 1000.0 / float(np.mean(intervals[-100:]))
        assert stats["fps"] == pytest.approx(fps_from_timings, rel=0.05)

    def test_identity_style_streams_input_frames(self, tmp_path, rng):
        frames = [Frame(np.round(random_frame(rng, 8, 8).pixels * 255) / 255) for _ in range(3)]
        write_frame_dir(frames, tmp_path / "frames")
        config = RunConfig(
            seg_model="stub:full:0:1",
            styles={"ident": "stub:identity"},
            frames=str(tmp_path / "frames"),
            assignment={0: "ident"},
            max_fps=60.0,
        )
        service = StylingService(config)
        with TestClient(create_app(service)) as client:
            with client.websocket_connect("/stream") as ws:
                png = ws.receive_bytes()
                timing = ws.receive_json()
                idx = timing["frame_index"] % len(frames)
                with Image.open(io.BytesIO(png)) as img:
                    arr = np.asarray(img.convert("RGB")) / 255.0
                assert np.array_equal(arr, frames[idx].pixels)
