"""CLI behaviour: determinism, exit codes, artifact contents."""

import json

from asdgraph import autodiff as ad
from asdgraph.cli import main

TINY = [
    "--set", "synth.num_scenes=4",
    "--set", "synth.num_frames=60",
    "--set", "plan.l=3",
    "--set", "plan.clip_len=8",
    "--set", "model.hidden=8",
    "--set", "model.d_in=6",
    "--set", "model.d_a=6",
    "--set", "model.encoder_width=8",
    "--set", "train.epochs=2",
    "--set", "train.milestones=[]",
    "--set", "train.samples_per_tracklet=1",
]


def run_synth(tmp_path, seed=3, subdir="scenes", extra=()):
    scenes_dir = tmp_path / subdir
    code = main(["synth", "--set", f"seed={seed}",
                 "--set", f"paths.scenes_dir={scenes_dir}", *TINY, *extra])
    return code, scenes_dir


def run_train(tmp_path, seed=3, extra=()):
    scenes_dir = tmp_path / "scenes"
    ckpt = tmp_path / "ckpt.json"
    log = tmp_path / "log.jsonl"
    code = main(["train", "--set", f"seed={seed}",
                 "--set", f"paths.scenes_dir={scenes_dir}",
                 "--set", f"paths.checkpoint={ckpt}",
                 "--set", f"paths.log={log}", *TINY, *extra])
    return code, ckpt, log


class TestSynth:
    def test_writes_scenes_and_manifest(self, tmp_path):
        code, scenes_dir = run_synth(tmp_path)
        assert code == 0
        files = sorted(p.name for p in scenes_dir.glob("scene_*.json"))
        assert len(files) == 4
        manifest = json.loads((scenes_dir / "manifest.json").read_text())
        assert manifest["files"] == files
        assert manifest["seed"] == 3
        assert len(manifest["config_digest"]) == 64

    def test_rerun_is_byte_identical(self, tmp_path):
        _, scenes_dir = run_synth(tmp_path)
        snapshot = {p.name: p.read_bytes() for p in scenes_dir.iterdir()}
        _, scenes_dir = run_synth(tmp_path)
        after = {p.name: p.read_bytes() for p in scenes_dir.iterdir()}
        assert snapshot == after

    def test_missing_output_dir_is_created(self, tmp_path):
        code, scenes_dir = run_synth(tmp_path, subdir="deep/nested/dir")
        assert code == 0 and scenes_dir.is_dir()

    def test_zero_speakers_is_config_error(self, tmp_path):
        code, _ = run_synth(tmp_path, extra=("--set", "synth.speakers_min=0"))
        assert code == 1

    def test_missing_seed_is_config_error(self, tmp_path):
        code = main(["synth", "--set",
                     f"paths.scenes_dir={tmp_path / 's'}", *TINY])
        assert code == 1

    def test_unknown_field_is_config_error(self, tmp_path):
        code, _ = run_synth(tmp_path, extra=("--set", "synth.bogus=1"))
        assert code == 1


class TestTrain:
    def test_full_mode_writes_checkpoint_and_log(self, tmp_path):
        run_synth(tmp_path)
        code, ckpt, log = run_train(tmp_path)
        assert code == 0 and ckpt.exists()
        lines = log.read_text().strip().split("\n")
        header = json.loads(lines[0])
        assert "config_digest" in header
        entry = json.loads(lines[1])
        assert {"step", "epoch", "lr", "loss"} <= set(entry)
        assert "L_v" in entry["loss"]

    def test_weak_mode_log_components(self, tmp_path):
        run_synth(tmp_path)
        code, _, log = run_train(tmp_path, extra=("--set", "train.mode=weak"))
        assert code == 0
        entry = json.loads(log.read_text().strip().split("\n")[1])
        assert "L_s" in entry["loss"] and "L_c" in entry["loss"]
        assert "L_v" not in entry["loss"]

    def test_rerun_is_byte_identical(self, tmp_path):
        run_synth(tmp_path)
        _, ckpt_a, log_a = run_train(tmp_path)
        bytes_a = ckpt_a.read_bytes(), log_a.read_bytes()
        _, ckpt_b, log_b = run_train(tmp_path)
        assert ckpt_b.read_bytes() == bytes_a[0]
        assert log_b.read_bytes() == bytes_a[1]

    def test_joint_and_st_styles_differ(self, tmp_path):
        run_synth(tmp_path)
        losses = {}
        for style in ("ST", "Joint"):
            _, _, log = run_train(tmp_path,
                                  extra=("--set", f"model.block_style={style}"))
            entries = [json.loads(line) for line
                       in log.read_text().strip().split("\n")[1:]]
            losses[style] = entries[-1]["loss"]["total"]
        assert losses["ST"] != losses["Joint"]

    def test_missing_scenes_dir_is_config_error(self, tmp_path):
        code, _, _ = run_train(tmp_path)
        assert code == 1


class TestEval:
    def setup_trained(self, tmp_path):
        run_synth(tmp_path)
        run_train(tmp_path)

    def eval_args(self, tmp_path, extra=()):
        return ["eval", "--set", "seed=3",
                "--set", f"paths.scenes_dir={tmp_path / 'scenes'}",
                "--set", f"paths.checkpoint={tmp_path / 'ckpt.json'}",
                "--set", f"paths.report={tmp_path / 'report.json'}",
                *TINY, *extra]

    def test_report_written(self, tmp_path):
        self.setup_trained(tmp_path)
        assert main(self.eval_args(tmp_path)) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert 0.0 <= report["map"] <= 1.0
        assert report["n_predictions"] > 0
        assert len(report["config_digest"]) == 64
        assert "baselines" not in report

    def test_baselines_flag_adds_five_rows(self, tmp_path):
        self.setup_trained(tmp_path)
        assert main(self.eval_args(tmp_path, ("--baselines",))) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert set(report["baselines"]) == {
            "random", "naive_recall", "naive_precision",
            "naive_audio_assignment", "largest_face"}

    def test_rerun_is_byte_identical(self, tmp_path):
        self.setup_trained(tmp_path)
        main(self.eval_args(tmp_path, ("--baselines",)))
        first = (tmp_path / "report.json").read_bytes()
        main(self.eval_args(tmp_path, ("--baselines",)))
        assert (tmp_path / "report.json").read_bytes() == first

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        run_synth(tmp_path)
        assert main(self.eval_args(tmp_path)) == 1

    def test_corrupted_checkpoint_is_runtime_error(self, tmp_path):
        self.setup_trained(tmp_path)
        (tmp_path / "ckpt.json").write_text("{broken")
        assert main(self.eval_args(tmp_path)) == 2


class TestVerify:
    def test_clean_build_passes(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "overall" in out and "FAIL" not in out

    def test_injected_backward_fault_fails_with_exit_3(self, capsys):
        with ad.inject_backward_sign_flip("matmul"):
            assert main(["verify"]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_verify_output_is_stable(self, capsys):
        main(["verify"])
        first = capsys.readouterr().out
        main(["verify"])
        assert capsys.readouterr().out == first
