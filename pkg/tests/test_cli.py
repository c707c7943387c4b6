"""End-to-end CLI behavior: files, exit codes, determinism."""

import numpy as np
import pytest

from freqseg.cli import main
from freqseg.data import Volume, read_manifest, read_volume, write_svol

FAST_TRAIN = [
    "--set", "phantom.extents=16,16,8",
    "--set", "phantom.radius_min=2.0",
    "--set", "phantom.radius_max=3.0",
    "--set", "split.train=4",
    "--set", "split.val=2",
    "--set", "split.test=2",
    "--set", "train.epochs=2",
    "--set", "eval.bootstrap_b=100",
]


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    directory = tmp_path_factory.mktemp("cli_data")
    code = main([
        "phantom-gen", "--out", str(directory),
        "--set", "phantom.extents=16,16,8",
        "--set", "phantom.radius_min=2.0",
        "--set", "phantom.radius_max=3.0",
        "--set", "phantom.count=8",
    ])
    assert code == 0
    return directory


class TestDisentangleCommand:
    def test_writes_parts_that_reconstruct(self, tmp_path, capsys):
        data = np.random.default_rng(0).standard_normal((8, 8, 8))
        src = tmp_path / "in.svol"
        write_svol(src, Volume(data))
        out_prefix = tmp_path / "out" / "parts"
        code = main(["disentangle", str(src), "--theta", "0.5", "--out", str(out_prefix)])
        assert code == 0
        high = read_volume(tmp_path / "out" / "parts.high.svol")
        low = read_volume(tmp_path / "out" / "parts.low.svol")
        stored = data.astype(np.float32).astype(np.float64)
        # parts are stored as float32, so reconstruction holds at f32 precision
        assert np.abs(high.data + low.data - stored).max() < 1e-6
        out = capsys.readouterr().out
        assert "high block [2, 6)" in out
        assert "max reconstruction error" in out

    def test_theta_out_of_range_is_usage_error(self, tmp_path):
        src = tmp_path / "in.svol"
        write_svol(src, Volume(np.zeros((4, 4, 4))))
        assert main(["disentangle", str(src), "--theta", "1.5", "--out",
                     str(tmp_path / "x")]) == 2

    def test_missing_input_is_runtime_error(self, tmp_path):
        assert main(["disentangle", str(tmp_path / "nope.svol"), "--out",
                     str(tmp_path / "x")]) == 1


class TestPhantomGenCommand:
    def test_manifest_and_files(self, cli_dataset):
        ids = read_manifest(cli_dataset)
        assert len(ids) == 8
        for sid in ids:
            assert (cli_dataset / f"{sid}.vol.svol").is_file()
            assert (cli_dataset / f"{sid}.mask.svol").is_file()

    def test_bad_config_key_is_usage_error(self, tmp_path):
        assert main(["phantom-gen", "--out", str(tmp_path / "d"),
                     "--set", "phantom.shape=8,8,8"]) == 2


class TestTrainEvaluateCommands:
    def test_train_writes_checkpoint_and_meta(self, cli_dataset, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        code = main(["train", "--data", str(cli_dataset), "--out", str(ckpt), *FAST_TRAIN])
        assert code == 0
        assert ckpt.is_file()
        meta = (tmp_path / "model.ckpt.meta").read_text()
        assert "config_hash=" in meta and "best_epoch=" in meta
        out = capsys.readouterr().out
        assert "epoch    1" in out and "val dice" in out

    def test_evaluate_round_trip_and_hash_guard(self, cli_dataset, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        assert main(["train", "--data", str(cli_dataset), "--out", str(ckpt),
                     *FAST_TRAIN]) == 0
        report = tmp_path / "report.txt"
        code = main(["evaluate", "--data", str(cli_dataset), "--ckpt", str(ckpt),
                     "--report", str(report), *FAST_TRAIN])
        assert code == 0
        assert "mean" in capsys.readouterr().out
        assert "subject" in report.read_text()

        # changing a hashed section without --leak-ok must refuse
        drifted = [*FAST_TRAIN, "--set", "split.seed=9"]
        code = main(["evaluate", "--data", str(cli_dataset), "--ckpt", str(ckpt), *drifted])
        assert code == 1
        code = main(["evaluate", "--data", str(cli_dataset), "--ckpt", str(ckpt),
                     "--leak-ok", *drifted])
        assert code == 0

    def test_missing_checkpoint_is_runtime_error(self, cli_dataset, tmp_path):
        assert main(["evaluate", "--data", str(cli_dataset),
                     "--ckpt", str(tmp_path / "none.ckpt"), *FAST_TRAIN]) == 1


class TestSweepCommand:
    def test_sweep_outputs(self, cli_dataset, tmp_path, capsys):
        out = tmp_path / "results"
        code = main([
            "sweep", "--data", str(cli_dataset), "--out", str(out), *FAST_TRAIN,
            "--set", "sweep.fractions=0.5",
            "--set", "sweep.seeds=0",
            "--set", "sweep.modes=none,late",
        ])
        assert code == 0
        results = (out / "results.csv").read_text()
        lines = results.strip().splitlines()
        assert lines[0] == ("task,fraction,n_train,mode,seed,dice_mean,dice_lo,dice_hi,"
                            "hd95_mean,hd95_lo,hd95_hi,wall_s,config_hash")
        assert len(lines) == 3
        assert (out / "results.canonical.csv").is_file()
        assert "median dice %" in (out / "table.txt").read_text()
        # canonical variant zeroes wall_s but is otherwise identical
        canon = (out / "results.canonical.csv").read_text().strip().splitlines()
        for row, crow in zip(lines[1:], canon[1:]):
            assert row.rsplit(",", 2)[0] == crow.rsplit(",", 2)[0]
            assert crow.rsplit(",", 2)[1] == "0.0"


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert main([]) == 2

    def test_help_lists_config_keys(self, capsys):
        code = main(["--help"])
        assert code == 0
        out = capsys.readouterr().out
        assert "[train]" in out and "lr" in out
