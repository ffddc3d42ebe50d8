"""Tests for the sbfm command line."""

import csv
import json

import pytest
from click.testing import CliRunner

from sbfm import __version__
from sbfm.cli import cli
from sbfm.manifest import RunManifest

SMALL_DATA = [
    "--set", "toy_data.n_objects=4",
    "--set", "toy_data.code_dim=4",
    "--set", "toy_data.t_a=8",
    "--set", "toy_data.t_v=4",
    "--set", "toy_data.c_v=2",
]
SMALL_MODEL = [
    "--set", "field_model.trunk_width=16",
    "--set", "field_model.trunk_depth=2",
    "--set", "field_model.head_width=8",
    "--set", "field_model.head_depth=1",
    "--set", "trainer.batch_size=8",
]


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SBFM_THREADS", raising=False)
    return CliRunner()


def _gen(runner, *extra):
    return runner.invoke(
        cli, ["gen-data", "--seed", "3", "--pairs", "40", "--objects", "4", *SMALL_DATA, *extra]
    )


@pytest.fixture
def trained(runner):
    assert _gen(runner, "--output", "toy.sbds").exit_code == 0
    result = runner.invoke(
        cli,
        ["train", "--dataset", "toy.sbds", "--epochs", "2", "--run-dir", "run", "--no-progress",
         *SMALL_MODEL],
    )
    assert result.exit_code == 0, result.output
    manifest = RunManifest.load("run/manifest.json")
    return f"run/{manifest.selected_checkpoint}"


class TestTopLevel:
    """Group options."""

    def test_version(self, runner):
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_help_lists_config_keys(self, runner):
        result = runner.invoke(cli, ["--help"])
        assert result.exit_code == 0
        assert "bridge_math.sigma = 0.1" in result.output
        for command in ("gen-data", "train", "sample", "verify", "eval", "plot-data"):
            assert command in result.output


class TestGenData:
    """The gen-data command."""

    def test_writes_dataset_and_digest(self, runner, tmp_path):
        result = _gen(runner, "--output", "toy.sbds")
        assert result.exit_code == 0, result.output
        digest, path = result.output.split()
        assert path == "toy.sbds"
        sidecar = json.loads((tmp_path / "toy.sbds.json").read_text())
        assert sidecar["digest"] == digest

    def test_same_seed_same_digest(self, runner):
        first = _gen(runner, "--output", "a.sbds").output.split()[0]
        second = _gen(runner, "--output", "b.sbds").output.split()[0]
        assert first == second

    def test_single_object_scene_rejected(self, runner):
        result = _gen(runner, "--objects-per-scene", "1", "--output", "bad.sbds")
        assert result.exit_code != 0
        assert "ConfigError" in result.output

    def test_bad_assignment(self, runner):
        result = runner.invoke(cli, ["gen-data", "--set", "toy_data.colour=red"])
        assert result.exit_code != 0
        assert "unknown config key" in result.output


class TestTrainSampleEval:
    """Training, sampling and scoring through the command line."""

    def test_train_writes_run(self, trained, tmp_path):
        run = tmp_path / "run"
        assert (run / "config.ini").is_file()
        assert (tmp_path / trained).is_file()
        manifest = RunManifest.load(run / "manifest.json")
        assert manifest.status == "completed"
        assert len(manifest.epochs) == 2
        assert len(manifest.dataset_digest) == 64

    def test_sample_writes_paths(self, runner, trained, tmp_path):
        result = runner.invoke(
            cli, ["sample", "--checkpoint", trained, "--dataset", "toy.sbds", "--steps", "30"]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "samples" / "generated.npy").is_file()
        with (tmp_path / "samples" / "trajectories.csv").open() as fh:
            rows = list(csv.reader(fh))[1:]
        # the 40-pair dataset has a 2-pair test split
        assert len(rows) == 2 * 31
        assert sum(1 for r in rows if r[0] == "0") == 31

    def test_eval_and_plot_data(self, runner, trained, tmp_path):
        result = runner.invoke(
            cli,
            ["eval", "--checkpoint", trained, "--dataset", "toy.sbds", "--pair-errors", "errors.csv"],
        )
        assert result.exit_code == 0, result.output
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["n_evaluated"] == 2
        assert (tmp_path / "errors.csv").read_text().startswith("pair_id,audio_se,video_se")

        result = runner.invoke(cli, ["plot-data", "run/manifest.json", "--report", "metrics.json"])
        assert result.exit_code == 0, result.output
        with (tmp_path / "plot-data.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        # per-epoch and baseline rows, then 3 per block and 2 energy rows
        assert len(rows) == 2 * 7 + 1 + 3 * 3 + 2
        assert {r["run"] for r in rows} == {"run", "metrics"}

    def test_missing_dataset(self, runner):
        result = runner.invoke(cli, ["train", "--dataset", "absent.sbds"])
        assert result.exit_code != 0


class TestVerify:
    """The verify command."""

    def test_selected_checks(self, runner, tmp_path):
        result = runner.invoke(
            cli, ["verify", "--only", "endpoint-pinning", "--only", "time-reversal", "--report", "v.json"]
        )
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "v.json").read_text())
        assert [r["name"] for r in report] == ["endpoint-pinning", "time-reversal"]
        assert all(r["status"] == "pass" for r in report)

    def test_unknown_check(self, runner):
        result = runner.invoke(cli, ["verify", "--only", "nope"])
        assert result.exit_code != 0
        assert "unknown check" in result.output

    def test_failure_exits_one(self, runner, mocker):
        from sbfm.checks import CheckOutcome, CheckRegistry, CheckSpec

        registry = CheckRegistry()
        registry.register(CheckSpec(name="broken", func=lambda: CheckOutcome(False, 2.0, 1.0)))
        mocker.patch("sbfm.cli.default_registry", return_value=registry)
        result = runner.invoke(cli, ["verify"])
        assert result.exit_code == 1
        assert "broken" in result.output
