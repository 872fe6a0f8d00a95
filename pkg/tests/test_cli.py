import json
import subprocess
import sys

import numpy as np
import pytest

from resilimb.cli import load_joints, main
from resilimb.io import load_keypoints, load_mesh_obj, save_keypoints
from resilimb.core import KeypointSet2D
from resilimb.meshedit import is_watertight

AMPS = '{"LeftShank": 0.4, "RightUpperArm": 0.7}'
FIT_OUTPUTS = ("mesh.obj", "mask.pgm", "joints.json", "report.json")


def synth(out, *extra, amps=AMPS, seed=7):
    assert main(["synth", str(out), "--amputations", amps, "--seed", str(seed), *extra]) == 0


def fit(scene, out, *extra, keypoints=None):
    return main(["fit", str(scene / "body.json"), str(keypoints or scene / "keypoints.json"),
                 str(scene / "camera.json"), str(out), *extra])


def evaluate(scene, out, capsys, *extra, mask=None):
    capsys.readouterr()
    code = main(["eval", str(out / "mesh.obj"), str(out / "joints.json"), str(scene / "keypoints.json"),
                 str(mask or scene / "mask.pgm"), str(scene / "camera.json"), *extra])
    text = capsys.readouterr().out
    return code, dict(line.split(": ") for line in text.strip().splitlines())


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    synth(d)
    return d


@pytest.fixture(scope="module")
def fitted(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert fit(scene, out) == 0
    return out


def test_fit_recovers_lambda(scene, fitted):
    truth = {e["limb"]: e for e in json.loads((scene / "truth.json").read_text())["limbs"]}
    report = json.loads((fitted / "report.json").read_text())
    assert report["mesh_watertight"]
    assert sorted(e["limb"] for e in report["limbs"]) == sorted(truth)
    for entry in report["limbs"]:
        assert entry["status"] == "accepted" and entry["watertight"]
        assert abs(entry["lambda"] - truth[entry["limb"]]["lambda"]) < 0.02
        assert np.abs(np.subtract(entry["anchor"], truth[entry["limb"]]["anchor"])).max() < 1e-3
    assert is_watertight(load_mesh_obj(fitted / "mesh.obj"))
    assert set(json.loads((fitted / "timings.json").read_text())) >= {"rafo", "reconstruct"}


def test_eval_perfect_prediction(scene, fitted, capsys):
    code, rep = evaluate(scene, fitted, capsys)
    assert code == 0
    assert rep["mpjpe_body_px"] == "0.00" and rep["mpjpe_residual_px"] == "0.00"
    assert rep["miou"] == "1.000" and rep["visible_residual"] == "2"


def test_midpoint_baseline_is_worse(scene, fitted, capsys):
    _, ours = evaluate(scene, fitted, capsys)
    _, mid = evaluate(scene, fitted, capsys, "--baseline", "midpoint")
    assert float(mid["mpjpe_residual_px"]) > float(ours["mpjpe_residual_px"]) + 1.0


def test_unreachable_keypoint_is_rejected(scene, tmp_path, capsys):
    kp = load_keypoints(scene / "keypoints.json")
    body, residual = kp.body_array(), kp.residual_array()
    residual[5, 0] += 300.0  # LeftShank endpoint, far off the segment
    save_keypoints(tmp_path / "kp.json", KeypointSet2D.from_arrays(body, residual))
    out = tmp_path / "out"
    code = fit(scene, out, "--alpha", "1e8", "--mu", "1e8", "--fixed-weights", keypoints=tmp_path / "kp.json")
    assert code == 2
    report = {e["limb"]: e for e in json.loads((out / "report.json").read_text())["limbs"]}
    assert report["LeftShank"]["status"] == "rejected" and "cut" not in report["LeftShank"]
    assert report["LeftShank"]["reprojection_error_px"] >= 15
    assert report["RightUpperArm"]["status"] == "accepted" and report["RightUpperArm"]["watertight"]
    assert "LeftShank: rejected" in capsys.readouterr().out


def test_missing_camera_is_fatal(scene, tmp_path, capsys):
    out = tmp_path / "never"
    code = main(["fit", str(scene / "body.json"), str(scene / "keypoints.json"), str(tmp_path / "nope.json"),
                 str(out)])
    assert code == 1 and not out.exists()
    assert capsys.readouterr().err.startswith("error: ")


def test_bad_threads_and_malformed_input(scene, tmp_path):
    assert fit(scene, tmp_path / "o", "--threads", "0") == 1
    (tmp_path / "kp.json").write_text("{not json")
    assert fit(scene, tmp_path / "o", keypoints=tmp_path / "kp.json") == 1
    assert main(["synth", str(tmp_path / "s"), "--amputations", '{"LeftShank": 1.5}']) == 1
    assert main(["synth", str(tmp_path / "s"), "--amputations", '{"LeftTail": 0.5}']) == 1


def test_eval_mask_size_mismatch(scene, fitted, tmp_path, capsys):
    (tmp_path / "m.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(16))
    code = main(["eval", str(fitted / "mesh.obj"), str(fitted / "joints.json"), str(scene / "keypoints.json"),
                 str(tmp_path / "m.pgm"), str(scene / "camera.json")])
    assert code == 1 and "DimensionMismatch" in capsys.readouterr().err


def test_joints_file(fitted):
    joints, segments = load_joints(fitted / "joints.json")
    assert joints.shape == (33, 2)
    assert np.isfinite(joints[25 + 5]).all() and np.isfinite(joints[25 + 2]).all()
    assert np.isnan(joints[25 + 0]).all()
    assert len(segments) == 8 and all(s is not None for s in segments)


def test_synth_is_byte_identical(tmp_path):
    synth(tmp_path / "a")
    synth(tmp_path / "b")
    for name in ("body.json", "keypoints.json", "camera.json", "mask.pgm", "gt_mesh.obj", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_synth_noise_changes_only_keypoints(tmp_path):
    synth(tmp_path / "a")
    synth(tmp_path / "b", "--noise-px", "2")
    for name in ("body.json", "camera.json", "mask.pgm", "gt_mesh.obj"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    a = load_keypoints(tmp_path / "a" / "keypoints.json")
    b = load_keypoints(tmp_path / "b" / "keypoints.json")
    assert np.array_equal(a.body_array()[:, 2], b.body_array()[:, 2])
    assert not np.array_equal(a.body_array(), b.body_array())


def test_fit_threads_do_not_change_outputs(scene, fitted, tmp_path):
    out = tmp_path / "t4"
    assert fit(scene, out, "--threads", "4") == 0
    for name in FIT_OUTPUTS:
        assert (out / name).read_bytes() == (fitted / name).read_bytes(), name


def test_module_entry_point(scene, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "resilimb", "fit", str(scene / "body.json"),
                           str(scene / "keypoints.json"), str(scene / "camera.json"), str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "LeftShank: accepted" in proc.stdout
