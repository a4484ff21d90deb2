"""End-to-end command-line behavior: generation determinism, the train /
eval / infer flow, the grouping benchmark, and exit codes."""

import os

import numpy as np
import pytest

from im2pc.cli import main
from im2pc.config import TrainConfig, apply_overrides, parse_kv_file


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A tiny dataset plus a checkpoint trained for one epoch."""
    root = tmp_path_factory.mktemp("flow")
    data = str(root / "data")
    ckpt = str(root / "model.ckpt")
    assert main(["gen", "--out", data, "--n", "3", "--seed", "5",
                 "--points", "96"]) == 0
    cfg = root / "train.cfg"
    cfg.write_text("epochs=1\nholdout_frac=0.34\n# comment line\n")
    assert main(["train", "--data", data, "--config", str(cfg),
                 "--out", ckpt]) == 0
    return data, ckpt, root


class TestGen:
    def test_deterministic_checksum(self, tmp_path, capsys):
        outs = []
        for sub in ("a", "b"):
            code, out, _ = run(capsys, "gen", "--out", str(tmp_path / sub),
                               "--n", "2", "--seed", "3", "--points", "64")
            assert code == 0
            outs.append(out.splitlines()[-1])
        assert outs[0] == outs[1]
        assert outs[0].startswith("manifest sha256: ")

    def test_seed_changes_checksum(self, tmp_path, capsys):
        _, out_a, _ = run(capsys, "gen", "--out", str(tmp_path / "a"),
                          "--n", "1", "--seed", "1", "--points", "64")
        _, out_b, _ = run(capsys, "gen", "--out", str(tmp_path / "b"),
                          "--n", "1", "--seed", "2", "--points", "64")
        assert out_a.splitlines()[-1] != out_b.splitlines()[-1]

    def test_mode_flag(self, tmp_path, capsys):
        code, _, _ = run(capsys, "gen", "--out", str(tmp_path / "d"),
                         "--n", "1", "--mode", "decalib", "--points", "64")
        assert code == 0
        meta = (tmp_path / "d" / "scene_0000" / "meta.txt").read_text()
        assert "mode=decalib" in meta and "noise=" in meta


class TestTrainEval:
    def test_train_artifacts(self, trained):
        _, ckpt, _ = trained
        assert os.path.getsize(ckpt) > 0
        log = open(ckpt + ".log.csv").read().splitlines()
        assert log[0] == "epoch,split,loss,rre_deg,rte,lr"
        assert len(log) == 2

    def test_eval_reports(self, trained, capsys):
        data, ckpt, root = trained
        prefix = str(root / "report")
        code, out, _ = run(capsys, "eval", "--data", data, "--ckpt", ckpt,
                           "--out", prefix)
        assert code == 0
        metrics = open(prefix + "_metrics.csv").read().splitlines()
        assert metrics[0].split(",")[:2] == ["n_total", "n_gated"]
        assert metrics[1].split(",")[0] == "3"
        recall = open(prefix + "_recall.csv").read().splitlines()
        assert recall[0] == "metric,threshold,recall"
        assert len(recall) == 1 + 20 + 50
        hist = open(prefix + "_hist.csv").read().splitlines()
        assert hist[0] == "metric,bin_lo,bin_hi,fraction"

    def test_eval_is_bytewise_deterministic(self, trained, capsys):
        data, ckpt, root = trained
        for tag in ("r1", "r2"):
            assert main(["eval", "--data", data, "--ckpt", ckpt,
                         "--out", str(root / tag)]) == 0
        capsys.readouterr()
        for suffix in ("_metrics.csv", "_recall.csv", "_hist.csv"):
            a = open(str(root / "r1") + suffix, "rb").read()
            b = open(str(root / "r2") + suffix, "rb").read()
            assert a == b

    def test_infer_output_format(self, trained, capsys):
        data, ckpt, root = trained
        scene = os.path.join(data, "scene_0000")
        intr = root / "intr.txt"
        meta = dict(line.split("=", 1) for line in
                    open(os.path.join(scene, "meta.txt")).read().splitlines())
        fx, fy, cx, cy = meta["intrinsics"].split(",")
        intr.write_text(f"fx={fx}\nfy={fy}\ncx={cx}\ncy={cy}\n")
        code, out, _ = run(capsys, "infer", "--ckpt", ckpt,
                           "--cloud", os.path.join(scene, "cloud.bin"),
                           "--image", os.path.join(scene, "image.ppm"),
                           "--intrinsics", str(intr))
        assert code == 0
        lines = out.splitlines()
        assert [l.split(":")[0] for l in lines] == [
            "coarse q", "coarse t", "fine q", "fine t"]
        q = np.array([float(x) for x in lines[2].split(":")[1].split()])
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


class TestBench:
    def test_bench_knn_matches(self, capsys):
        code, out, _ = run(capsys, "bench-knn", "--n", "300", "--trials", "2",
                           "--k", "8")
        assert code == 0
        assert "mismatched indices: 0" in out
        assert "backend:" in out


class TestExitCodes:
    def test_bad_arguments_exit_2(self):
        with pytest.raises(SystemExit) as e:
            main(["gen", "--n", "notanint", "--out", "/tmp/x"])
        assert e.value.code == 2

    def test_missing_data_exit_3(self, trained, capsys):
        _, ckpt, _ = trained
        code, _, err = run(capsys, "eval", "--data", "/nonexistent/dir",
                           "--ckpt", ckpt, "--out", "/tmp/r")
        assert code == 3
        assert "data error" in err

    def test_bad_checkpoint_exit_3(self, trained, tmp_path, capsys):
        data, _, _ = trained
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        code, _, err = run(capsys, "eval", "--data", data,
                           "--ckpt", str(bad), "--out", str(tmp_path / "r"))
        assert code == 3


class TestConfigFile:
    def test_parse_and_override(self, tmp_path):
        cfg_file = tmp_path / "c.cfg"
        cfg_file.write_text("lr = 0.01  # tuned\nepochs=2\nbetas=0.8,0.99\n")
        kv = parse_kv_file(cfg_file)
        cfg = apply_overrides(TrainConfig(), kv)
        assert cfg.lr == 0.01 and cfg.epochs == 2
        assert cfg.betas == (0.8, 0.99)

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(KeyError):
            apply_overrides(TrainConfig(), {"nope": "1"})
