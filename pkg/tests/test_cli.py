"""Command-line surface: exit codes, subcommands, and end-to-end consistency."""

import numpy as np
import pytest

from flowfact import data, evaluation, training
from flowfact.cli import run_cli

TINY = """
preset = toy
iterations = 15
n_train = 12
n_test = 6
batch_size = 4
horizon = 3
latent_dim = 4
channels = 2,3,4,5
pot_hidden = 8,8
log_every = 5
seed = 5
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.txt"
    cfg_path.write_text(TINY)
    out = root / "run"
    assert run_cli(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return root, out


class TestUsage:
    def test_help_exits_zero(self, capsys):
        assert run_cli(["--help"]) == 0
        assert "flowfact" in capsys.readouterr().out

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert run_cli(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand_is_usage_error(self):
        assert run_cli([]) == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli(["train", "--bogus", "x"]) == 1

    def test_missing_file_is_runtime_error(self, capsys):
        assert run_cli(["train", "--config", "/nonexistent/cfg.txt"]) == 2
        assert "error" in capsys.readouterr().err


class TestTrainEval:
    def test_train_writes_checkpoint_and_metrics(self, trained):
        _, out = trained
        assert (out / "checkpoint.ffckpt").exists()
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("iteration,loss")

    def test_eval_csv_matches_library_recomputation(self, trained, capsys):
        root, out = trained
        csv = root / "metrics_eval.csv"
        code = run_cli(
            ["eval", "--ckpt", str(out / "checkpoint.ffckpt"), "--metric", "equiv-out", "--out", str(csv)]
        )
        assert code == 0
        rows = csv.read_text().splitlines()
        assert rows[0] == "metric,k,value,n_sequences"
        ckpt = training.load_checkpoint(out / "checkpoint.ffckpt")
        cfg, model, bank = training.restore_from_checkpoint(ckpt)
        ds = training.build_dataset(cfg)
        n, kc = ds.test.shape[0], ds.test.shape[1]
        seqs = ds.test.reshape(n * kc, *ds.test.shape[2:])
        labels = np.tile(np.arange(kc), n)
        expected = evaluation.equivariance_report(model, bank, seqs, labels)
        for line, row in zip(rows[1:], expected):
            metric, k, value, count = line.split(",")
            assert metric == "equiv-out" and int(k) == row.k and int(count) == row.n_sequences
            assert abs(float(value) - row.value) < 1e-6 * max(1.0, abs(row.value))

    def test_eval_elbo_mode_runs(self, trained, capsys):
        _, out = trained
        assert run_cli(["eval", "--ckpt", str(out / "checkpoint.ffckpt"), "--metric", "elbo"]) == 0
        assert "elbo" in capsys.readouterr().out

    def test_bad_metric_rejected(self, trained):
        _, out = trained
        assert run_cli(["eval", "--ckpt", str(out / "checkpoint.ffckpt"), "--metric", "bogus"]) == 1


class TestTraverse:
    def test_traverse_writes_ppm(self, trained):
        root, out = trained
        ppm = root / "t.ppm"
        code = run_cli(
            ["traverse", "--ckpt", str(out / "checkpoint.ffckpt"), "--schedule", "0:2,1:1", "--out", str(ppm)]
        )
        assert code == 0
        img = evaluation.read_ppm(ppm)
        assert img.shape == (16, 3 * 16 + 2, 3)

    def test_superpose_schedule_parses(self, trained):
        root, out = trained
        ppm = root / "s.ppm"
        assert run_cli(
            ["traverse", "--ckpt", str(out / "checkpoint.ffckpt"), "--schedule", "0+2:2", "--out", str(ppm)]
        ) == 0

    def test_bad_schedule_is_runtime_error(self, trained):
        root, out = trained
        assert run_cli(
            ["traverse", "--ckpt", str(out / "checkpoint.ffckpt"), "--schedule", "nope", "--out", str(root / "x.ppm")]
        ) == 2


class TestVerifyOt:
    def test_checkpoint_report(self, trained, capsys):
        _, out = trained
        assert run_cli(["verify-ot", "--ckpt", str(out / "checkpoint.ffckpt")]) == 0
        assert "transport_cost" in capsys.readouterr().out


class TestGenData:
    def test_writes_cache(self, tmp_path, capsys):
        path = tmp_path / "bases.ffds"
        assert run_cli(["gen-data", "--preset", "toy", "--out", str(path), "--count", "8", "--size", "16"]) == 0
        arr = data.load_cache(path)
        assert arr.shape == (8, 3, 16, 16)
        assert np.array_equal(arr, data.make_toy_dataset(0, 8, 16))
