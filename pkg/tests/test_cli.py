# File: tests/test_cli.py
import json
from pathlib import Path

import numpy as np
import pytest

from integrations.camera_io import read_cameras
from integrations.obj_io import write_obj
from integrations.ply_io import write_gaussian_ply
from main import dispatch
from services.toy_scene import icosphere


def run_cli(capsys, *argv):
    code = dispatch(["--threads", "1", *argv])
    captured = capsys.readouterr()
    payload = json.loads(captured.out.strip().splitlines()[-1]) if code == 0 else None
    return code, payload, captured.err


@pytest.fixture(scope="module")
def toy_package(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    inputs, package = root / "inputs", root / "package"
    assert dispatch(["toy", "--out", str(inputs), "--count", "300", "--subdivisions", "1", "--size", "16", "--views", "2"]) == 0
    assert dispatch(
        [
            "--threads", "1", "build",
            "--unconstrained", str(inputs / "unconstrained.ply"),
            "--regularized", str(inputs / "regularized.ply"),
            "--mesh", str(inputs / "mesh.obj"),
            "--out", str(package),
            "--budget", "100",
        ]
    ) == 0
    return inputs, package


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    # KEEP THE REPO frosting.yaml OUT OF THE TESTS
    monkeypatch.chdir(tmp_path)


def test_toy_writes_all_inputs(capsys, tmp_path):
    code, payload, _ = run_cli(capsys, "toy", "--out", str(tmp_path / "toy"), "--count", "50", "--size", "8", "--views", "3")
    assert code == 0
    assert set(payload) == {"unconstrained.ply", "regularized.ply", "mesh.obj", "cameras.json"}
    for path in payload.values():
        assert Path(path).exists()
    assert len(read_cameras(payload["cameras.json"])) == 3


def test_build_reports_the_package(capsys, tmp_path, toy_package):
    inputs, _ = toy_package
    out = tmp_path / "pkg"
    code, payload, _ = run_cli(
        capsys,
        "build",
        "--unconstrained", str(inputs / "unconstrained.ply"),
        "--regularized", str(inputs / "regularized.ply"),
        "--mesh", str(inputs / "mesh.obj"),
        "--out", str(out),
        "--budget", "60",
        "--strategy", "constant",
    )
    assert code == 0
    assert payload["gaussians"] == 60
    assert payload["vertices"] == icosphere(1).vertex_count
    assert payload["cells"] == icosphere(1).face_count
    assert 0.0 <= payload["thickness"]["min"] <= payload["thickness"]["max"]
    assert payload["thickness"]["max"] > 0.0
    assert (out / "manifest.json").exists()


def test_render_then_metrics(capsys, tmp_path, toy_package):
    inputs, package = toy_package
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        code, payload, _ = run_cli(capsys, "render", "--pkg", str(package), "--cameras", str(inputs / "cameras.json"), "--out", str(out))
        assert code == 0
        assert len(payload["images"]) == 2

    code, payload, _ = run_cli(capsys, "metrics", "--pred", str(first), "--gt", str(second))
    assert code == 0
    assert payload["psnr"] == 100.0
    assert payload["ssim"] == pytest.approx(1.0)
    assert set(payload["images"]) == {"view_000.png", "view_001.png"}


def test_render_a_raw_cloud(capsys, tmp_path, toy_package):
    inputs, _ = toy_package
    code, payload, _ = run_cli(
        capsys, "render", "--ply", str(inputs / "unconstrained.ply"), "--cameras", str(inputs / "cameras.json"), "--out", str(tmp_path)
    )
    assert code == 0
    assert len(payload["images"]) == 2


def test_optimize_a_few_steps(capsys, tmp_path, toy_package):
    inputs, package = toy_package
    images = tmp_path / "gt"
    run_cli(capsys, "render", "--pkg", str(package), "--cameras", str(inputs / "cameras.json"), "--out", str(images))
    out = tmp_path / "refined"
    code, payload, _ = run_cli(
        capsys, "optimize", "--pkg", str(package), "--cameras", str(inputs / "cameras.json"),
        "--images", str(images), "--iters", "2", "--out", str(out),
    )
    assert code == 0
    assert payload["iterations"] == 2
    assert (out / "optimizer_state.bin").exists()


def test_depth_on_a_unit_grid(capsys, tmp_path, cloud_factory):
    axis = np.arange(10.0)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    path = tmp_path / "grid.ply"
    write_gaussian_ply(path, cloud_factory(grid))
    code, payload, _ = run_cli(capsys, "depth", "--ply", str(path))
    assert code == 0
    assert payload["raw_depth"] == -4
    assert payload["depth"] == 1
    assert payload["default_depth"] == 10


def test_deform_onto_another_mesh_fails(capsys, tmp_path, toy_package):
    _, package = toy_package
    wrong = tmp_path / "wrong.obj"
    write_obj(wrong, icosphere(2))
    code, _, err = run_cli(capsys, "deform", "--pkg", str(package), "--deformed-mesh", str(wrong), "--out", str(tmp_path / "out"))
    assert code == 1
    assert str(icosphere(1).vertex_count) in err
    assert str(icosphere(2).vertex_count) in err


@pytest.mark.parametrize("blend", ["log", "linear"])
def test_deform_onto_the_same_mesh(capsys, tmp_path, toy_package, blend):
    _, package = toy_package
    code, payload, _ = run_cli(
        capsys, "deform", "--pkg", str(package), "--deformed-mesh", str(package / "mesh.obj"),
        "--out", str(tmp_path / "out"), "--blend", blend,
    )
    assert code == 0
    assert payload["gaussians"] == 100


def test_unknown_flag_is_a_usage_error(capsys):
    code, _, _ = run_cli(capsys, "render", "--bogus")
    assert code == 1


def test_missing_package_is_a_user_error(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "render", "--pkg", str(tmp_path), "--cameras", str(tmp_path / "none.json"), "--out", str(tmp_path))
    assert code == 1


def test_zero_budget_is_a_user_error(capsys, tmp_path, toy_package):
    inputs, _ = toy_package
    argv = [
        "build",
        "--unconstrained", str(inputs / "unconstrained.ply"),
        "--regularized", str(inputs / "regularized.ply"),
        "--mesh", str(inputs / "mesh.obj"),
        "--out", str(tmp_path / "pkg"),
    ]
    code, _, _ = run_cli(capsys, *argv, "--budget", "0")
    assert code == 1

    config = tmp_path / "zero.yaml"
    config.write_text("sampling:\n  budget: 0\n")
    code, _, err = run_cli(capsys, "--config", str(config), *argv)
    assert code == 1
    assert "budget" in err
    assert not (tmp_path / "pkg").exists()
