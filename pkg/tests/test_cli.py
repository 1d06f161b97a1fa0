"""End-to-end checks of the command-line front end, run in process.

Every subcommand is run twice with identical inputs and must produce byte
identical files and stdout: determinism is part of the contract.
"""

import json

import numpy as np
import pytest

from bevlane import LaneFile, write_lane_file
from bevlane.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from bevlane.geometry import CameraPose, DEFAULT_INTRINSICS, project_points3_to_image


def run(capsys, *args):
    code = main(list(args))
    return code, capsys.readouterr().out


def run_twice(capsys, tmp_path, *args, out_name="out.json"):
    """Run one subcommand twice with identical arguments; assert stdout and the
    output file agree byte for byte across runs."""
    out = tmp_path / out_name
    code, first_text = run(capsys, *args, "--out", str(out))
    assert code == EXIT_OK
    first_bytes = out.read_bytes()
    code, second_text = run(capsys, *args, "--out", str(out))
    assert code == EXIT_OK
    assert out.read_bytes() == first_bytes
    assert second_text == first_text
    return first_bytes, json.loads(first_text)


@pytest.fixture()
def scene_path(tmp_path, capsys):
    path = tmp_path / "scene.json"
    code, _ = run(capsys, "synth", "--profile", "flat", "--seed", "3", "--out", str(path))
    assert code == EXIT_OK
    return path


@pytest.fixture()
def encoded_path(tmp_path, capsys, scene_path):
    path = tmp_path / "encoded.json"
    code, _ = run(capsys, "encode", "--in", str(scene_path), "--out", str(path))
    assert code == EXIT_OK
    return path


def test_synth_reproducible(capsys, tmp_path):
    _, doc = run_twice(
        capsys, tmp_path, "synth", "--profile", "bend", "--seed", "11", out_name="scene.json"
    )
    assert doc["profile"] == "bend"
    assert doc["n_lanes"] == 4
    assert doc["pitch_deg"] == 0.0


def test_synth_perturbed_pitch_reproducible(capsys, tmp_path):
    _, doc = run_twice(
        capsys,
        tmp_path,
        "synth",
        "--profile",
        "flat",
        "--seed",
        "1",
        "--perturb-pitch-deg",
        "3.0",
        "--perturb-seed",
        "7",
        out_name="scene.json",
    )
    assert doc["pitch_deg"] != 0.0
    assert abs(doc["pitch_deg"]) <= 3.0


def test_calibrate_recovers_pitch(capsys, tmp_path):
    scene = tmp_path / "scene.json"
    run(capsys, "synth", "--profile", "flat", "--seed", "2", "--perturb-pitch-deg", "2.5",
        "--perturb-seed", "4", "--out", str(scene))
    capsys.readouterr()
    _, doc = run_twice(
        capsys, tmp_path, "calibrate", "--in", str(scene), "--iters", "5", out_name="calib.json"
    )
    assert doc["converged"] is True
    assert doc["n_pairs"] == 3
    assert doc["abs_error_deg"] < 1e-6


def test_calibrate_out_file_matches_stdout(capsys, tmp_path, scene_path):
    out = tmp_path / "calib.json"
    code, text = run(capsys, "calibrate", "--in", str(scene_path), "--out", str(out))
    assert code == EXIT_OK
    assert out.read_text(encoding="utf-8") == text


def test_encode_reproducible(capsys, tmp_path, scene_path):
    _, doc = run_twice(
        capsys, tmp_path, "encode", "--in", str(scene_path), out_name="encoded.json"
    )
    assert doc["active_layer1"] == 4
    assert doc["active_layer2"] == 0
    assert doc["dropped"] == []


def test_loss_weak_reproducible(capsys, encoded_path):
    # loss has no --out; byte-compare the stdout of two runs
    texts = []
    for _ in range(2):
        code, text = run(
            capsys, "loss", "--pred", str(encoded_path), "--gt", str(encoded_path), "--normalize"
        )
        assert code == EXIT_OK
        texts.append(text)
    assert texts[0] == texts[1]
    doc = json.loads(texts[0])
    assert doc["l_width"] <= 1e-4  # serialization rounding keeps GT near, not at, zero
    assert doc["l_height"] <= 1e-4
    assert doc["l_z"] == 0.0


def test_loss_sup_and_weights(capsys, encoded_path):
    code, text = run(
        capsys, "loss", "--pred", str(encoded_path), "--gt", str(encoded_path), "--mode", "sup"
    )
    assert code == EXIT_OK
    base = json.loads(text)
    assert base["l_z"] == 0.0
    code, text = run(
        capsys, "loss", "--pred", str(encoded_path), "--gt", str(encoded_path),
        "--mode", "sup", "--weights", "bev=2.0",
    )
    assert code == EXIT_OK
    doubled = json.loads(text)
    # term fields stay raw; the weight shows up in the weighted total
    assert doubled["l_bev"] == pytest.approx(base["l_bev"], rel=1e-9)
    assert doubled["total"] == pytest.approx(base["total"] + base["l_bev"], rel=1e-6)


def test_loss_with_pitch_pair(capsys, encoded_path):
    code, text = run(
        capsys, "loss", "--pred", str(encoded_path), "--gt", str(encoded_path),
        "--pred-pitch-deg", "1.0", "--calib-pitch-deg", "0.5",
    )
    assert code == EXIT_OK
    assert json.loads(text)["l_pitch"] > 0.0


def test_loss_half_pitch_pair_rejected(capsys, encoded_path):
    code, _ = run(
        capsys, "loss", "--pred", str(encoded_path), "--gt", str(encoded_path),
        "--pred-pitch-deg", "1.0",
    )
    assert code == EXIT_INVALID


def test_fit_weak_flat_reproducible(capsys, tmp_path, scene_path):
    _, doc = run_twice(
        capsys, tmp_path, "fit", "--in", str(scene_path), out_name="fit.json"
    )
    assert doc["mode"] == "weak"
    assert doc["converged"] is True
    assert doc["n_steps"] == 0  # flat labels start at the optimum
    assert doc["z_rmse_m"] <= 1e-9


def test_fit_sup_flat_reproducible(capsys, tmp_path, scene_path):
    _, doc = run_twice(
        capsys, tmp_path, "fit", "--in", str(scene_path), "--mode", "sup", out_name="fit.json"
    )
    assert doc["converged"] is True
    assert doc["z_rmse_m"] <= 1e-9


def test_nms_reproducible(capsys, tmp_path, encoded_path):
    _, doc = run_twice(
        capsys, tmp_path, "nms", "--in", str(encoded_path), out_name="nms.json"
    )
    # encoded lanes sit a full lane width apart; nothing to suppress
    assert doc["before"] == 4 and doc["after"] == 4 and doc["suppressed"] == 0


def test_eval_reproducible(capsys, tmp_path, scene_path):
    fit_out = tmp_path / "fit.json"
    run(capsys, "fit", "--in", str(scene_path), "--out", str(fit_out))
    capsys.readouterr()
    _, doc = run_twice(
        capsys, tmp_path, "eval", "--pred", str(fit_out), "--gt", str(scene_path),
        out_name="eval.json",
    )
    assert doc["f1"] == 100.0
    assert doc["x_near"] <= 1e-9
    # decoded lanes start at the 2.5 m anchor row while the scene starts at
    # 2.0 m, so the chamfer picks up one endpoint overhang term
    assert doc["chamfer_m"] <= 0.02


def test_plot_reproducible(capsys, tmp_path, scene_path):
    svg, _ = run_twice(
        capsys, tmp_path, "plot", "--in", str(scene_path), out_name="plot.svg"
    )
    assert svg.startswith(b"<svg ")
    pred_svg = tmp_path / "pred.svg"
    code, _ = run(
        capsys, "plot", "--in", str(scene_path), "--pred", str(scene_path), "--out", str(pred_svg)
    )
    assert code == EXIT_OK
    assert pred_svg.read_bytes() != svg


def test_missing_file_exits_invalid(capsys, tmp_path):
    code, _ = run(capsys, "calibrate", "--in", str(tmp_path / "nope.json"))
    assert code == EXIT_INVALID


def test_malformed_json_exits_invalid(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    code, _ = run(capsys, "encode", "--in", str(bad), "--out", str(tmp_path / "o.json"))
    assert code == EXIT_INVALID


def test_encode_without_bev_lanes_exits_invalid(capsys, tmp_path):
    empty = tmp_path / "empty.json"
    write_lane_file(empty, LaneFile())
    code, _ = run(capsys, "encode", "--in", str(empty), "--out", str(tmp_path / "o.json"))
    assert code == EXIT_INVALID


def test_coincident_lanes_exit_numeric(capsys, tmp_path):
    pose = CameraPose(pitch_rad=0.0, height_m=1.5)
    y = np.linspace(3.0, 20.0, 12)
    pts = np.stack([np.full_like(y, 1.85), y, np.zeros_like(y)], axis=1)
    uv = project_points3_to_image(pts, DEFAULT_INTRINSICS, pose)
    path = tmp_path / "twin.json"
    write_lane_file(
        path,
        LaneFile(intrinsics=DEFAULT_INTRINSICS, pose=pose, lanes_image=[uv, uv.copy()]),
    )
    code, _ = run(capsys, "calibrate", "--in", str(path))
    assert code == EXIT_NUMERIC


def test_usage_errors_exit_64(capsys, tmp_path):
    for argv in (
        ["synth", "--profile", "mountain", "--out", str(tmp_path / "o.json")],
        ["synth", "--seed", "notanint", "--out", str(tmp_path / "o.json")],
        ["fit", "--no-such-flag"],
        ["loss", "--pred", "a", "--gt", "b", "--weights", "bogus=1"],
        [],
    ):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == EXIT_USAGE
    capsys.readouterr()
