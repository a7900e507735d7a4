"""Command-line interface: artifacts, exit codes and idempotence."""

import json
import os

import pytest

from earlyseq.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "data.jsonl"
    code = run("generate", "--task", "paired", "--n", "48", "--seed", "7",
               "-o", str(path))
    assert code == 0
    return path


TRAIN_FLAGS = ("--epochs", "1", "--lr", "0.003", "--batch-size", "16",
               "--seed", "3")


class TestGenerate:
    def test_line_count_matches_n(self, tmp_path):
        out = tmp_path / "d.jsonl"
        assert run("generate", "--task", "paired", "--n", "25", "--seed", "1",
                   "-o", str(out)) == 0
        assert len(out.read_text().splitlines()) == 25

    def test_identical_flags_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run("generate", "--task", "structured-arrival", "--n", "12", "--seed", "5",
            "-o", str(a))
        run("generate", "--task", "structured-arrival", "--n", "12", "--seed", "5",
            "-o", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_task_is_usage_error(self, tmp_path):
        assert run("generate", "--task", "movies", "-o", str(tmp_path / "x")) == 2

    def test_manifest_written(self, tmp_path):
        out = tmp_path / "d.jsonl"
        run("generate", "--task", "paired", "--n", "5", "--seed", "1", "-o", str(out))
        manifest = json.loads((tmp_path / "d.jsonl.manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["artifacts"] == ["d.jsonl"]
        assert manifest["config"]["seed"] == 1

    def test_unwritable_output_fails(self, tmp_path):
        target = tmp_path / "missing-dir" / "d.jsonl"
        assert run("generate", "--task", "paired", "--n", "5", "-o", str(target)) == 1

    def test_generator_config_file(self, tmp_path):
        config = tmp_path / "gen.cfg"
        config.write_text("words_total=3\nnoise=0.0\n")
        out = tmp_path / "d.jsonl"
        assert run("generate", "--task", "paired", "--n", "4", "--seed", "2",
                   "--config", str(config), "-o", str(out)) == 0
        record = json.loads(out.read_text().splitlines()[0])
        assert len(record["elements"]) == 4

    def test_unknown_config_key_named(self, tmp_path):
        config = tmp_path / "gen.cfg"
        config.write_text("wordy_total=3\n")
        code = run("generate", "--task", "paired", "--config", str(config),
                   "-o", str(tmp_path / "d.jsonl"))
        assert code == 2


class TestTrain:
    def test_missing_dataset_no_partial_outputs(self, tmp_path):
        out_dir = tmp_path / "run"
        code = run("train", "--data", str(tmp_path / "nope.jsonl"),
                   "--out-dir", str(out_dir))
        assert code == 1
        assert not out_dir.exists()

    def test_artifacts_labeled_by_objective(self, dataset, tmp_path):
        out_dir = tmp_path / "run"
        assert run("train", "--data", str(dataset), "--objective", "larm",
                   "--mu", "0.01", *TRAIN_FLAGS, "--out-dir", str(out_dir)) == 0
        names = sorted(os.listdir(out_dir))
        assert names == [
            "checkpoint_larm.json", "manifest_train.json", "points_larm.csv",
            "rollouts_larm.csv", "train_log_larm.csv",
        ]
        header = (out_dir / "train_log_larm.csv").read_text().splitlines()[0]
        assert header == "epoch,loss,mean_T,accuracy"

    def test_train_config_file_and_flag_precedence(self, dataset, tmp_path):
        config = tmp_path / "train.cfg"
        config.write_text("objective=larm\nepochs=1\nlearning_rate=0.001\n"
                          "batch_size=16\nmu=0.5\n")
        out_dir = tmp_path / "run"
        assert run("train", "--data", str(dataset), "--mu", "0.25",
                   "--config", str(config), "--seed", "3",
                   "--out-dir", str(out_dir)) == 0
        manifest = json.loads((out_dir / "manifest_train.json").read_text())
        assert manifest["config"]["mu"] == 0.25  # flag beats config file
        assert manifest["config"]["learning_rate"] == 0.001
        assert manifest["config"]["objective"] == "larm"
        assert (out_dir / "points_larm.csv").exists()

    def test_unknown_train_config_key(self, dataset, tmp_path):
        config = tmp_path / "train.cfg"
        config.write_text("momentum=0.9\n")
        code = run("train", "--data", str(dataset), "--config", str(config),
                   "--out-dir", str(tmp_path / "run"))
        assert code == 2

    def test_identical_flags_give_identical_artifacts(self, dataset, tmp_path):
        outputs = []
        for name in ("one", "two"):
            out_dir = tmp_path / name
            assert run("train", "--data", str(dataset), "--mu", "0.01",
                       *TRAIN_FLAGS, "--out-dir", str(out_dir)) == 0
            outputs.append({
                f: (out_dir / f).read_bytes()
                for f in os.listdir(out_dir) if not f.startswith("manifest")
            })
        assert outputs[0] == outputs[1]  # manifests differ only by timestamps


class TestSweep:
    def test_checkpoint_per_cell_and_pooled_points(self, dataset, tmp_path):
        out_dir = tmp_path / "run"
        assert run("sweep", "--data", str(dataset), "--objective", "cis",
                   "--mu-list", "1e-3,1e-2,1e-1,0.5,1.0", "--trials", "3",
                   *TRAIN_FLAGS, "--out-dir", str(out_dir)) == 0
        checkpoints = [n for n in os.listdir(out_dir) if n.startswith("checkpoint_")]
        assert len(checkpoints) == 15
        points = (out_dir / "points_cis.csv").read_text().splitlines()
        assert points[0] == "mu,trial,epoch,mean_T,accuracy"
        assert len(points) == 1 + 15  # one epoch per cell
        manifest = json.loads((out_dir / "manifest_sweep.json").read_text())
        assert len(manifest["artifacts"]) == 15 + 15 + 2

    def test_bad_mu_list_is_usage_error(self, dataset, tmp_path):
        assert run("sweep", "--data", str(dataset), "--mu-list", "abc",
                   "--out-dir", str(tmp_path / "run")) == 2


class TestReport:
    def _points_csv(self, tmp_path, name, rows):
        path = tmp_path / name
        lines = ["mu,trial,epoch,mean_T,accuracy"]
        lines += [",".join(str(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_worked_auc_example(self, tmp_path):
        points = self._points_csv(tmp_path, "points.csv", [
            (0.01, 0, 0, 1.0, 0.6),
            (0.01, 0, 1, 2.0, 0.7),
            (0.1, 0, 0, 3.0, 0.65),
        ])
        out_dir = tmp_path / "rep"
        assert run("report", "--points", f"demo={points}", "--t-end", "3",
                   "--out-dir", str(out_dir)) == 0
        rows = (out_dir / "auc_summary.csv").read_text().splitlines()
        assert rows[0] == "method,trial,auc,mean_auc"
        method, trial, auc, mean_auc = rows[1].split(",")
        assert (method, trial) == ("demo", "0")
        assert abs(float(auc) - 0.65) < 1e-12
        assert abs(float(mean_auc) - 0.65) < 1e-12
        frontier = (out_dir / "frontier_demo.csv").read_text().splitlines()
        assert len(frontier) == 3  # header + two non-dominated points

    def test_summary_row_per_method(self, tmp_path):
        a = self._points_csv(tmp_path, "a.csv", [(0.01, 0, 0, 1.0, 0.8)])
        b = self._points_csv(tmp_path, "b.csv", [(0.01, 0, 0, 1.0, 0.6)])
        out_dir = tmp_path / "rep"
        assert run("report", "--points", f"cis={a}", "--points", f"larm={b}",
                   "--t-end", "4", "--out-dir", str(out_dir)) == 0
        rows = (out_dir / "auc_summary.csv").read_text().splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == ["cis", "larm"]

    def test_malformed_csv_reports_line(self, tmp_path, capsys):
        path = tmp_path / "points.csv"
        path.write_text("mu,trial,epoch,mean_T,accuracy\n0.01,0,0,1.0,0.9\n0.01,zero,1,2.0,0.8\n")
        code = run("report", "--points", str(path), "--t-end", "3",
                   "--out-dir", str(tmp_path / "rep"))
        assert code == 1
        assert "line 3" in capsys.readouterr().err

    def test_svg_only_on_flag(self, tmp_path, dataset):
        run_dir = tmp_path / "run"
        run("train", "--data", str(dataset), "--mu", "0.01", *TRAIN_FLAGS,
            "--out-dir", str(run_dir))
        out_plain = tmp_path / "rep_plain"
        run("report", "--points", f"cis={run_dir / 'points_cis.csv'}",
            "--rollouts", f"cis={run_dir / 'rollouts_cis.csv'}",
            "--t-end", "8", "--out-dir", str(out_plain))
        assert not [n for n in os.listdir(out_plain) if n.endswith(".svg")]

        out_svg = tmp_path / "rep_svg"
        assert run("report", "--points", f"cis={run_dir / 'points_cis.csv'}",
                   "--rollouts", f"cis={run_dir / 'rollouts_cis.csv'}",
                   "--t-end", "8", "--svg", "--out-dir", str(out_svg)) == 0
        svgs = sorted(n for n in os.listdir(out_svg) if n.endswith(".svg"))
        assert svgs == ["frontiers.svg", "histogram_cis.svg"]
        scatter = (out_svg / "frontiers.svg").read_text()
        frontier_rows = (out_svg / "frontier_cis.csv").read_text().splitlines()[1:]
        # one circle per frontier point plus one legend marker
        assert scatter.count("<circle") == len(frontier_rows) + 1
        bars = (out_svg / "histogram_cis.svg").read_text()
        hist_rows = (out_svg / "histogram_cis.csv").read_text().splitlines()[1:]
        assert bars.count("<rect") == len(hist_rows)

    def test_histogram_counts_match_rollouts(self, tmp_path):
        rollouts = tmp_path / "rollouts.csv"
        rollouts.write_text(
            "mu,trial,T,correct,signature\n"
            "0.01,0,1,1,image|text\n"
            "0.01,0,1,0,image|text\n"
            "0.01,0,3,1,text|image\n"
        )
        points = self._points_csv(tmp_path, "p.csv", [(0.01, 0, 0, 1.0, 0.9)])
        out_dir = tmp_path / "rep"
        assert run("report", "--points", f"m={points}", "--rollouts",
                   f"m={rollouts}", "--t-end", "3", "--out-dir", str(out_dir)) == 0
        hist = (out_dir / "histogram_m.csv").read_text().splitlines()
        assert hist == ["T,count", "1,2", "3,1"]
        flow = (out_dir / "flow_m.csv").read_text().splitlines()
        assert flow[0] == "signature,T,count"
        assert "image|text,1,2" in flow
        assert "text|image,3,1" in flow


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert run() == 2

    def test_version_flag_exits_cleanly(self, capsys):
        assert run("--version") == 0

    def test_malformed_dataset_is_runtime_failure(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{broken\n")
        code = run("train", "--data", str(bad), "--out-dir", str(tmp_path / "run"))
        assert code == 1
        assert "line 1" in capsys.readouterr().err
