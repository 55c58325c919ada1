import json
import os
import subprocess
from pathlib import Path

import numpy as np
import pytest

from conftest import read_pfm


def run(cli, *args, cwd, env=None):
    full_env = dict(os.environ)
    full_env.update(env or {})
    return subprocess.run([cli, *map(str, args)], cwd=cwd, env=full_env, capture_output=True, text=True, timeout=600)


def files(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(Path(directory).rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(cli, tmp_path_factory):
    """synth -> train (2 steps) -> infer, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert run(cli, "synth", "--seed", 0, "--out", "subject", cwd=root).returncode == 0
    r = run(cli, "train", "--subject", "subject", "--steps", 2, "--out", "ckpt/weights.bin", cwd=root)
    assert r.returncode == 0, r.stderr
    r = run(cli, "infer", "--image", "subject/input.pfm", "--params", "subject/params.json",
            "--checkpoint", "ckpt/weights.bin", "--out", "inferred", cwd=root)
    assert r.returncode == 0, r.stderr
    return root


def test_synth_is_deterministic(cli, tmp_path):
    for name in ("a", "b"):
        assert run(cli, "synth", "--seed", 7, "--out", name, cwd=tmp_path).returncode == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == [Path("run.json")]


def test_every_command_writes_run_json(workspace):
    for directory, command in [("subject", "synth"), ("ckpt", "train"), ("inferred", "infer")]:
        record = json.loads((workspace / directory / "run.json").read_text())
        assert record["command"] == command
        assert record["threads"] >= 1
        if command != "synth":
            assert record["config"]["gamma"] == 0.8


def test_train_outputs(workspace):
    rows = (workspace / "ckpt" / "metrics.csv").read_text().strip().splitlines()
    assert rows[0].startswith("step,")
    assert len(rows) == 1 + 3
    assert (workspace / "ckpt" / "weights.bin").stat().st_size > 0


def test_render_frame_zero_replays_inference(cli, workspace):
    r = run(cli, "render", "--mesh", "inferred/mesh.obj", "--texture", "inferred/texture.pfm",
            "--params", "inferred/params.json", "--frames", 3, "--dump-gbuffer", "--out", "frames", cwd=workspace)
    assert r.returncode == 0, r.stderr
    out = workspace / "frames"
    for kind in ("frame", "depth", "normals", "uv", "parts"):
        assert (out / f"{kind}_0002.pfm").exists()
    assert (out / "mask_0002.png").exists()
    k = json.loads((workspace / "inferred" / "run.json").read_text())["config"]["iterations"]
    replay = read_pfm(out / "frame_0000.pfm")
    inferred = read_pfm(workspace / "inferred" / f"render_t{k}.pfm")
    # Both sides went through float32 files.
    assert np.abs(replay - inferred).max() <= 1e-6
    assert np.abs(read_pfm(out / "frame_0002.pfm") - replay).max() > 1e-3


def test_check_command(cli, tmp_path):
    r = run(cli, "check", "--suite", "geometry", "--out", "chk", cwd=tmp_path)
    assert r.returncode == 0
    assert "[PASS]" in r.stdout and "[FAIL]" not in r.stdout
    assert json.loads((tmp_path / "chk" / "run.json").read_text())["command"] == "check"


@pytest.mark.parametrize("args", [
    [],
    ["frobnicate"],
    ["synth"],
    ["synth", "--out", "x", "--profile", "huge"],
    ["render", "--mesh", "m.obj"],
    ["check", "--suite", "everything"],
])
def test_usage_errors_exit_2(cli, tmp_path, args):
    assert run(cli, *args, cwd=tmp_path).returncode == 2


def test_bad_config_and_thread_count_exit_2(cli, workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"gamma": 3}')
    r = run(cli, "train", "--subject", workspace / "subject", "--config", bad, "--steps", 1,
            "--out", tmp_path / "w.bin", cwd=tmp_path)
    assert r.returncode == 2
    r = run(cli, "synth", "--out", "s", cwd=tmp_path, env={"AVATARFORGE_THREADS": "many"})
    assert r.returncode == 2


def test_runtime_failures_exit_1(cli, workspace, tmp_path):
    broken = tmp_path / "weights.bin"
    broken.write_bytes((workspace / "ckpt" / "weights.bin").read_bytes()[:100])
    r = run(cli, "infer", "--image", workspace / "subject/input.pfm", "--params", workspace / "subject/params.json",
            "--checkpoint", broken, "--out", "o", cwd=tmp_path)
    assert r.returncode == 1
    # Present but inconsistent: the sidecar describes a different vertex count.
    (tmp_path / "mesh.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    (tmp_path / "mesh.rig.json").write_bytes((workspace / "inferred" / "mesh.rig.json").read_bytes())
    r = run(cli, "render", "--mesh", "mesh.obj", "--texture", workspace / "inferred/texture.pfm",
            "--params", workspace / "inferred/params.json", "--out", "r", cwd=tmp_path)
    assert r.returncode == 1


def test_thread_setting_is_recorded(cli, tmp_path):
    assert run(cli, "synth", "--out", "s", cwd=tmp_path, env={"AVATARFORGE_THREADS": "3"}).returncode == 0
    assert json.loads((tmp_path / "s" / "run.json").read_text())["threads"] == 3
