import csv

import numpy as np
import pytest

from implicitvol import data, siren
from implicitvol.cli import ExperimentManifest, main


@pytest.fixture(scope="module")
def acq_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "acq"
    assert main(["simulate", "--phantom-seed", "7", "--side", "20", "--n", "6",
                 "--size", "12", "--out", str(out)]) == 0
    return out


def test_simulate_writes_slices_and_poses(acq_dir):
    assert len(list(acq_dir.glob("slice_*.pgm"))) == 6
    assert (acq_dir / "poses.csv").exists()
    assert data.read_volume(acq_dir / "volume.hdr").side == 20
    m = ExperimentManifest.from_json((acq_dir / "simulate.manifest.json").read_text())
    assert m.command == "simulate" and m.seeds["phantom"] == 7


def test_simulate_128_slices(tmp_path):
    out = tmp_path / "acq"
    assert main(["simulate", "--phantom-seed", "7", "--side", "16", "--n", "128",
                 "--size", "4", "--out", str(out)]) == 0
    assert len(list(out.glob("slice_*.pgm"))) == 128


def test_zero_noise_columns_match(tmp_path):
    out = tmp_path / "acq"
    assert main(["simulate", "--phantom-seed", "1", "--side", "16", "--n", "4", "--size", "8",
                 "--sigma-angle", "0", "--sigma-trans", "0", "--out", str(out)]) == 0
    with open(out / "poses.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            for f in data.POSE_FIELDS:
                assert row[f"true_{f}"] == row[f"noisy_{f}"]


@pytest.mark.parametrize("argv", [
    ["simulate", "--phantom-seed", "1", "--n", "0", "--out", "x"],
    ["simulate", "--n", "4", "--out", "x"],
    ["reconstruct", "--acq", "a", "--method", "magic", "--out", "x"],
    ["render", "--recon", "r", "--pose", "0,0,0", "--size", "4", "4", "--out", "x"],
    ["render", "--recon", "r", "--pose", "0,0,0,a,0,0", "--size", "4", "4", "--out", "x"],
    ["evaluate", "--recon", "r", "--truth", "t", "--planes", "oblique", "--out", "x"],
])
def test_usage_errors_exit_nonzero(argv, capsys):
    assert main(argv) != 0
    assert "error" in capsys.readouterr().err


def test_missing_inputs_exit_nonzero(tmp_path, capsys):
    assert main(["reconstruct", "--acq", str(tmp_path / "nope"), "--method", "baseline",
                 "--out", str(tmp_path / "v.hdr")]) == 1
    assert "not found" in capsys.readouterr().err


def test_baseline_volume_of_requested_side(acq_dir, tmp_path, capsys):
    out = tmp_path / "idw.hdr"
    assert main(["reconstruct", "--acq", str(acq_dir), "--method", "baseline", "--side", "10",
                 "--out", str(out)]) == 0
    assert data.read_volume(out).side == 10
    printed = capsys.readouterr().out
    assert "wall-clock" in printed and "baseline" in printed


def test_zero_epochs_checkpoint_is_initial(acq_dir, tmp_path):
    out = tmp_path / "m.ivol"
    assert main(["reconstruct", "--acq", str(acq_dir), "--method", "implicit", "--epochs", "0",
                 "--n-freqs", "2", "--hidden", "8", "--seed", "4", "--out", str(out)]) == 0
    net, _ = siren.load_checkpoint(out)
    init = siren.init(2, seed=4, hidden=8)
    for a, b in zip(net.parameters(), init.parameters()):
        assert a.tobytes() == b.tobytes()


def test_no_joint_keeps_noisy_poses(acq_dir, tmp_path):
    out = tmp_path / "m.ivol"
    assert main(["reconstruct", "--acq", str(acq_dir), "--method", "implicit", "--no-joint",
                 "--epochs", "1", "--n-freqs", "2", "--hidden", "8", "--out", str(out)]) == 0
    _, poses = siren.load_checkpoint(out)
    acq = data.read_acquisition(acq_dir)
    assert poses.tobytes() == acq.noisy_poses.tobytes()
    lines = (tmp_path / "m.ivol.loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,network_lr,pose_lr" and len(lines) == 2


def test_evaluate_truth_against_itself(acq_dir, tmp_path):
    out = tmp_path / "m.csv"
    assert main(["evaluate", "--recon", str(acq_dir / "volume.hdr"), "--truth", str(acq_dir / "volume.hdr"),
                 "--count", "3", "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "approach,N,jointly_optimized,plane,ncc,ssim,angle_rad,distance_px"
    rows = list(csv.DictReader(lines))
    assert [r["plane"] for r in rows] == ["axial", "coronal", "sagittal"]
    for r in rows:
        for key in ("ncc", "ssim"):
            mean = float(r[key].split("±")[0])
            assert abs(mean - 1.0) <= 1e-6


def test_render_zero_checkpoint_is_black(tmp_path):
    net = siren.init(2, seed=0, hidden=8)
    for p in net.parameters():
        p[...] = 0.0
    ckpt = tmp_path / "z.ivol"
    siren.save_checkpoint(ckpt, net)
    out = tmp_path / "z.pgm"
    assert main(["render", "--recon", str(ckpt), "--pose", "0,0,0,0,0,0", "--size", "6", "5",
                 "--out", str(out)]) == 0
    img = data.read_pgm(out)
    assert img.shape == (6, 5) and np.all(img == 0)


def test_render_resolutions_agree_on_shared_points(tmp_path):
    net = siren.init(3, seed=1, hidden=16, n_hidden=2)
    ckpt = tmp_path / "n.ivol"
    siren.save_checkpoint(ckpt, net)
    pose = "0.2,0.1,-0.3,0.05,0,0"
    imgs = []
    for size in ("33", "65"):
        out = tmp_path / f"r{size}.pgm"
        assert main(["render", "--recon", str(ckpt), "--pose", pose, "--size", size, size,
                     "--out", str(out)]) == 0
        imgs.append(data.read_pgm(out))
    assert np.max(np.abs(imgs[1][::2, ::2] - imgs[0])) <= 1 / 255


def test_render_volume_identity_is_central_plane(acq_dir, tmp_path):
    out = tmp_path / "c.pgm"
    assert main(["render", "--recon", str(acq_dir / "volume.hdr"), "--pose", "0,0,0,0,0,0",
                 "--size", "20", "20", "--out", str(out)]) == 0
    vol = data.read_volume(acq_dir / "volume.hdr").data
    # even side: the z = 0 plane lies midway between slices 9 and 10
    central = 0.5 * (vol[:, :, 9] + vol[:, :, 10]).T
    assert np.max(np.abs(data.read_pgm(out) - central)) <= 1 / 255


def test_manifest_replay_is_bit_identical(acq_dir, tmp_path):
    out = tmp_path / "m.ivol"
    argv = ["reconstruct", "--acq", str(acq_dir), "--method", "implicit", "--epochs", "2",
            "--n-freqs", "2", "--hidden", "8", "--out", str(out)]
    assert main(argv) == 0
    first = out.read_bytes(), (tmp_path / "m.ivol.loss.csv").read_bytes()
    assert main(["replay", "--manifest", str(tmp_path / "m.ivol.manifest.json")]) == 0
    assert (out.read_bytes(), (tmp_path / "m.ivol.loss.csv").read_bytes()) == first
