"""Command line surface: exit codes, determinism, and the network path.

CliRunner drives the commands in-process. The live tests run the real
service on a loopback socket (uvicorn in a daemon thread, or a child
process for `serve` itself) so replay and export travel actual HTTP.
"""

from __future__ import annotations

import dataclasses
import json
import re
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner

from groundmapper.cli import main
from groundmapper.osw import Workspace, serialize_workspace
from groundmapper.service import ServiceConfig, create_app
from groundmapper.session import read_session, write_session
from groundmapper.stabilize import FeatureClass


def _run(*args, input=None):
    return CliRunner().invoke(main, [str(a) for a in args], input=input)


def _field(output: str, name: str) -> int:
    match = re.search(rf"^{re.escape(name)}: (\d+)$", output, re.MULTILINE)
    assert match, f"{name!r} not in output:\n{output}"
    return int(match.group(1))


def _free_port() -> int:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


@pytest.fixture(scope="module")
def smoke_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cli") / "smoke-session"
    result = _run("generate", "--scene", "smoke", "--out", out, "--seed", "0")
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def live_server():
    """Real service on a loopback port; yields its base URL."""
    import uvicorn

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(create_app(ServiceConfig()), log_level="warning"))
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    thread.start()
    deadline = time.time() + 15
    while not server.started:
        assert thread.is_alive() and time.time() < deadline, "service did not start"
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


def _export_features(base_url: str) -> list:
    token = httpx.post(
        f"{base_url}/v1/login", json={"user_id": "mapper", "secret": "mapper"}
    ).json()["token"]
    resp = httpx.get(
        f"{base_url}/v1/workspaces/default/export",
        headers={"Authorization": f"Bearer {token}"},
    )
    return resp.json()["features"]


# --- generate ----------------------------------------------------------------

class TestGenerate:
    def test_writes_readable_session(self, smoke_dir):
        session = read_session(smoke_dir)
        assert len(session.capture_indices) == 12
        assert session.ground_truth is not None

    def test_same_seed_same_bytes(self, tmp_path):
        for sub in ("a", "b"):
            result = _run("generate", "--scene", "smoke", "--out", tmp_path / sub, "--seed", "3")
            assert result.exit_code == 0, result.output
        names_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        names_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert names_a == names_b
        for name in names_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_negative_noise(self, tmp_path):
        result = _run("generate", "--scene", "smoke", "--out", tmp_path / "s", "--gps-noise", "-1")
        assert result.exit_code == 2

    def test_unknown_scene_lists_builtins(self, tmp_path):
        result = _run("generate", "--scene", "boulevard", "--out", tmp_path / "s")
        assert result.exit_code == 2
        assert "default" in result.output

    def test_scene_json_file(self, tmp_path):
        scene = {
            "name": "custom",
            "origin": {"latitude": 47.0, "longitude": -122.0},
            "camera_height_m": 2.2,
            "path_length_m": 8.0,
            "frame_count": 12,
            "fps": 10.0,
            "image_width": 64,
            "image_height": 48,
            "focal_px": 60.0,
            "strip": {"east_min_m": 0.8, "east_max_m": 2.8},
            "objects": [
                {
                    "class": "pole",
                    "along_m": 4.0,
                    "half_width_m": 0.05,
                    "base_height_m": 0.0,
                    "top_height_m": 3.0,
                    "east_m": 1.8,
                }
            ],
        }
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(scene))
        result = _run("generate", "--scene", path, "--out", tmp_path / "s")
        assert result.exit_code == 0, result.output
        assert "wrote 8 captures (12 frames)" in result.output

    def test_invalid_scene_json(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text("{not json")
        result = _run("generate", "--scene", path, "--out", tmp_path / "s")
        assert result.exit_code == 2


# --- replay (offline) --------------------------------------------------------

class TestReplayDryRun:
    def test_summary_lines(self, smoke_dir):
        result = _run("replay", "--session", smoke_dir, "--dry-run")
        assert result.exit_code == 0, result.output
        assert _field(result.output, "captures processed") == 12
        assert "dry run: nothing uploaded" in result.output

    def test_auto_vet_accepts_everything(self, smoke_dir):
        result = _run("replay", "--session", smoke_dir, "--dry-run")
        localized = _field(result.output, "instances localized")
        accepted = _field(result.output, "instances accepted")
        assert localized > 0
        assert accepted == localized

    def test_class_filter_narrows(self, smoke_dir):
        full = _run("replay", "--session", smoke_dir, "--dry-run")
        only_poles = _run("replay", "--session", smoke_dir, "--dry-run", "--classes", "pole")
        assert only_poles.exit_code == 0, only_poles.output
        assert _field(only_poles.output, "instances localized") < _field(
            full.output, "instances localized"
        )

    def test_background_not_mappable(self, smoke_dir):
        result = _run("replay", "--session", smoke_dir, "--dry-run", "--classes", "background")
        assert result.exit_code == 2

    def test_missing_session_dir(self, tmp_path):
        result = _run("replay", "--session", tmp_path / "absent", "--dry-run")
        assert result.exit_code == 2

    def test_vet_file_conflicts_with_review(self, smoke_dir, tmp_path):
        vets = tmp_path / "vets.json"
        vets.write_text("[]")
        result = _run(
            "replay", "--session", smoke_dir, "--dry-run", "--vet-file", vets, "--review"
        )
        assert result.exit_code == 2

    def test_vet_file_malformed(self, smoke_dir, tmp_path):
        vets = tmp_path / "vets.json"
        vets.write_text("{broken")
        result = _run("replay", "--session", smoke_dir, "--dry-run", "--vet-file", vets)
        assert result.exit_code == 2

    def test_vet_file_wrong_shape(self, smoke_dir, tmp_path):
        vets = tmp_path / "vets.json"
        vets.write_text(json.dumps({"verdicts": {}}))
        result = _run("replay", "--session", smoke_dir, "--dry-run", "--vet-file", vets)
        assert result.exit_code == 2

    def test_vet_file_discards_count(self, smoke_dir, tmp_path):
        # capture 4 carries two signs and a pole; discarding both classes
        # should cost exactly those three instances against auto-vet
        vets = tmp_path / "vets.json"
        vets.write_text(
            json.dumps(
                [
                    {
                        "capture_id": 4,
                        "verdicts": {
                            "traffic_sign": {"verdict": "discard"},
                            "pole": {"verdict": "discard"},
                        },
                    }
                ]
            )
        )
        baseline = _run("replay", "--session", smoke_dir, "--dry-run")
        result = _run("replay", "--session", smoke_dir, "--dry-run", "--vet-file", vets)
        assert result.exit_code == 0, result.output
        assert _field(result.output, "instances accepted") == (
            _field(baseline.output, "instances accepted") - 3
        )

    def test_vet_file_incomplete_record(self, smoke_dir, tmp_path):
        # capture 4 also has poles; a record sworn complete but missing
        # that class must fail loudly, not guess
        vets = tmp_path / "vets.json"
        vets.write_text(
            json.dumps(
                [{"capture_id": 4, "verdicts": {"traffic_sign": {"verdict": "agree"}}}]
            )
        )
        result = _run("replay", "--session", smoke_dir, "--dry-run", "--vet-file", vets)
        assert result.exit_code == 2
        assert "capture 4" in result.output

    def test_interactive_defaults_agree(self, smoke_dir):
        result = _run(
            "replay", "--session", smoke_dir, "--dry-run", "--interactive",
            input="\n" * 40,
        )
        assert result.exit_code == 0, result.output
        localized = _field(result.output, "instances localized")
        assert _field(result.output, "instances accepted") == localized

    def test_interactive_reject_and_discard(self, smoke_dir):
        # capture 4 prompts sign first (lower class code), then pole:
        # agree with signs rejecting index 1, discard the pole
        result = _run(
            "replay", "--session", smoke_dir, "--dry-run", "--interactive",
            input="a\n1\nd\n" + "\n" * 40,
        )
        assert result.exit_code == 0, result.output
        baseline = _field(result.output, "instances localized")
        assert _field(result.output, "instances accepted") == baseline - 2


# --- eval ----------------------------------------------------------------

class TestEval:
    def test_in_process_grading(self, smoke_dir, tmp_path):
        out = tmp_path / "report.csv"
        result = _run("eval", "--session", smoke_dir, "--out", out)
        assert result.exit_code == 0, result.output
        rows = out.read_text().splitlines()
        assert rows[0] == "class,mean_m,std_m,rmse_m,n"
        table = {line.split(",")[0]: line.split(",") for line in rows[1:]}
        # the unobstructed pole grades near-exact; the sign is deliberately
        # shadowed by the pole crossing, so only its row may carry error
        assert float(table["pole"][3]) < 1e-6
        assert float(table["sidewalk_width"][1]) < 0.1
        assert int(table["all_objects"][4]) == 10
        assert f"wrote {out}" in result.output

    def test_export_grading_at_truth(self, smoke_dir, tmp_path):
        # an export sitting exactly on the ground truth grades to zero
        session = read_session(smoke_dir)
        capture_id = session.capture_indices[0]
        ws = Workspace("default")
        cs = ws.open_changeset("grader")
        for i, (cls, point) in enumerate(session.ground_truth.objects):
            ws.create_node(
                cs.changeset_id,
                location=point,
                feature_class=cls,
                tags={"capture_id": capture_id, "instance_id": i},
                timestamp=0.0,
            )
        ws.create_node(
            cs.changeset_id,
            location=session.ground_truth.objects[0][1],
            feature_class=FeatureClass.SIDEWALK,
            tags={"capture_id": capture_id, "width": session.ground_truth.sidewalk_width_m},
            timestamp=0.0,
        )
        pred = tmp_path / "pred.geojson"
        pred.write_text(serialize_workspace(ws.nodes, ws.ways))

        out = tmp_path / "report.csv"
        result = _run("eval", "--session", smoke_dir, "--pred", pred, "--out", out)
        assert result.exit_code == 0, result.output
        table = {line.split(",")[0]: line.split(",") for line in out.read_text().splitlines()[1:]}
        assert float(table["all_objects"][3]) == 0.0
        assert float(table["sidewalk_width"][1]) == 0.0

    def test_session_without_truth(self, smoke_dir, tmp_path):
        stripped = dataclasses.replace(read_session(smoke_dir), ground_truth=None)
        bare = tmp_path / "bare"
        write_session(stripped, bare)
        result = _run("eval", "--session", bare, "--out", tmp_path / "r.csv")
        assert result.exit_code == 2
        assert "ground truth" in result.output


# --- replay (live) -----------------------------------------------------------

class TestReplayLive:
    def test_auto_vet_uploads_and_closes(self, smoke_dir, live_server):
        dry = _run("replay", "--session", smoke_dir, "--dry-run")
        expected = _field(dry.output, "instances accepted") + _field(
            dry.output, "sidewalk measurements"
        )

        result = _run("replay", "--session", smoke_dir, "--server", live_server)
        assert result.exit_code == 0, result.output
        assert _field(result.output, "nodes uploaded") == expected
        assert "way: none" not in result.output

        features = _export_features(live_server)
        kinds = [f["properties"]["feature_kind"] for f in features]
        assert kinds.count("node") == expected
        assert kinds.count("way") == 1

    def test_review_mode_enqueues(self, smoke_dir, live_server):
        result = _run("replay", "--session", smoke_dir, "--server", live_server, "--review")
        assert result.exit_code == 0, result.output
        assert re.search(r"enqueued 12 captures into changeset \d+", result.output)

    def test_unreachable_server(self, smoke_dir):
        url = f"http://127.0.0.1:{_free_port()}"
        result = _run("replay", "--session", smoke_dir, "--server", url)
        assert result.exit_code == 3


# --- config pickup -----------------------------------------------------------

class TestConfigPickup:
    def test_cwd_gm_toml(self, smoke_dir, tmp_path, monkeypatch):
        (tmp_path / "gm.toml").write_text("[pipeline]\nprevious_frames = -1\n")
        monkeypatch.chdir(tmp_path)
        result = _run("replay", "--session", smoke_dir, "--dry-run")
        assert result.exit_code == 2
        assert "previous_frames" in result.output

    def test_explicit_config_reaches_pipeline(self, smoke_dir, tmp_path):
        # an absurd area floor drops every instance: proof the value landed
        config = tmp_path / "gm.toml"
        config.write_text("[pipeline]\nmin_instance_area = 100000\n")
        result = _run("--config", config, "replay", "--session", smoke_dir, "--dry-run")
        assert result.exit_code == 0, result.output
        assert _field(result.output, "instances localized") == 0

    def test_config_server_url_used(self, smoke_dir, tmp_path, monkeypatch):
        url = f"http://127.0.0.1:{_free_port()}"
        (tmp_path / "gm.toml").write_text(f'[server]\nurl = "{url}"\n')
        monkeypatch.chdir(tmp_path)
        result = _run("replay", "--session", smoke_dir)
        assert result.exit_code == 3  # reached for the configured URL and failed

    def test_no_server_configured(self, smoke_dir, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)  # no gm.toml here
        result = _run("replay", "--session", smoke_dir)
        assert result.exit_code == 2
        assert "--server" in result.output


# --- serve ---------------------------------------------------------------

class TestServe:
    def test_busy_port(self):
        blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        blocker.bind(("127.0.0.1", 0))
        blocker.listen(1)
        port = blocker.getsockname()[1]
        try:
            result = _run("serve", "--listen", f"127.0.0.1:{port}")
            assert result.exit_code == 3
            assert "cannot bind" in result.output
        finally:
            blocker.close()

    @pytest.mark.parametrize("listen", ["nocolon", "host:abc"])
    def test_bad_listen_value(self, listen):
        result = _run("serve", "--listen", listen)
        assert result.exit_code == 2

    def test_serves_health_and_ui(self, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<h1>review ui stub</h1>")
        port = _free_port()
        proc = subprocess.Popen(
            [
                sys.executable, "-m", "groundmapper.cli",
                "serve", "--listen", f"127.0.0.1:{port}", "--ui-dir", str(ui),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        try:
            base = f"http://127.0.0.1:{port}"
            deadline = time.time() + 20
            while True:
                try:
                    if httpx.get(f"{base}/healthz").status_code == 200:
                        break
                except httpx.TransportError:
                    pass
                assert proc.poll() is None and time.time() < deadline, "serve never came up"
                time.sleep(0.05)
            front = httpx.get(f"{base}/", follow_redirects=True)
            assert "review ui stub" in front.text
            login = httpx.post(
                f"{base}/v1/login", json={"user_id": "mapper", "secret": "mapper"}
            )
            assert login.status_code == 200
        finally:
            proc.terminate()
            proc.wait(timeout=10)
