"""Tests for the fastmap command-line interface."""

import numpy as np
import pytest

from fastmap import synth
from fastmap.cli import main
from fastmap.io import read_matches, read_model, write_matches


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSynthCommand:
    def test_writes_matches_and_gt(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "synth", "-o", str(tmp_path),
                               "--n-images", "6", "--n-points", "120")
        assert code == 0
        ms = read_matches(tmp_path / "matches.txt")
        assert ms.n_images == 6
        gt = read_model(tmp_path / "gt")
        assert int(gt.poses.registered.sum()) == 6

    def test_underconnected_scene_fails_cleanly(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "synth", "-o", str(tmp_path),
                               "--n-images", "4", "--n-points", "30")
        assert code == 1
        assert "error" in err


class TestRunCommand:
    def test_full_run_writes_model_and_report(self, tmp_path, capsys):
        spec = synth.SynthSpec(n_images=8, n_points=150, fov_deg=60.0, seed=0)
        ms, _ = synth.generate(spec)
        matches = tmp_path / "matches.txt"
        write_matches(ms, matches)
        out_dir = tmp_path / "model"
        code, out, _ = run_cli(capsys, "run", str(matches),
                               "-o", str(out_dir), "--seed", "0")
        assert code == 0
        assert (out_dir / "cameras.txt").is_file()
        assert (out_dir / "report.txt").is_file()
        assert "total" in out

    def test_config_file_respected(self, tmp_path, capsys):
        spec = synth.SynthSpec(n_images=8, n_points=150, fov_deg=60.0, seed=0)
        ms, _ = synth.generate(spec)
        matches = tmp_path / "matches.txt"
        write_matches(ms, matches)
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text("run_epipolar_adjustment = false\n"
                            "translation_steps = 1000\n")
        code, out, _ = run_cli(capsys, "run", str(matches),
                               "-o", str(tmp_path / "m"), "-c", str(cfg_path))
        assert code == 0
        assert "skipped" in out

    def test_bad_matches_file_reports_stage(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("not a matchfile\n")
        code, _, err = run_cli(capsys, "run", str(bad),
                               "-o", str(tmp_path / "m"))
        assert code == 1
        assert "error at stage ingest.read_matches" in err

    def test_pipeline_failure_writes_failed_report(self, tmp_path, capsys):
        spec = synth.SynthSpec(n_images=8, n_points=200, seed=1)
        ms, _ = synth.generate(spec)
        ms.pairs = ms.pairs[:1]
        matches = tmp_path / "matches.txt"
        write_matches(ms, matches)
        out_dir = tmp_path / "m"
        code, _, err = run_cli(capsys, "run", str(matches), "-o", str(out_dir))
        assert code == 1
        assert "error at stage" in err
        assert "FAILED" in (out_dir / "report.txt").read_text()


class TestEvalCommand:
    def test_self_eval_is_perfect(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "synth", "-o", str(tmp_path),
                             "--n-images", "6", "--n-points", "120")
        assert code == 0
        code, out, _ = run_cli(capsys, "eval", str(tmp_path / "gt"),
                               str(tmp_path / "gt"))
        assert code == 0
        table = dict(line.split() for line in out.strip().splitlines())
        assert float(table["ATE"]) < 1e-9
        assert float(table["RRA@1"]) == 100.0
        assert list(table) == ["ATE", "RRA@1", "RRA@3", "RTA@1", "RTA@3",
                               "AUC@1", "AUC@3"]

    def test_missing_dir_fails(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "eval", str(tmp_path / "a"),
                               str(tmp_path / "b"))
        assert code == 1
        assert "error" in err


class TestExportCommand:
    def test_reexport_preserves_model(self, tmp_path, capsys):
        run_cli(capsys, "synth", "-o", str(tmp_path),
                "--n-images", "6", "--n-points", "120")
        code, _, _ = run_cli(capsys, "export", str(tmp_path / "gt"),
                             "-o", str(tmp_path / "gt2"))
        assert code == 0
        for name in ("cameras.txt", "points3D.txt"):
            assert (tmp_path / "gt" / name).read_bytes() == \
                (tmp_path / "gt2" / name).read_bytes()
        a = read_model(tmp_path / "gt")
        b = read_model(tmp_path / "gt2")
        assert np.allclose(a.poses.rotations, b.poses.rotations, atol=1e-14)
        assert np.allclose(a.poses.centers, b.poses.centers, atol=1e-12)


def test_no_command_exits_with_usage(capsys):
    with pytest.raises(SystemExit):
        main([])
