"""End-to-end tests for the command line workflow.

Commands run in-process through cli.main so exit codes and outputs are
checked directly; one subprocess test covers the module entry point.
"""

import json
import subprocess
import sys

import pytest

from stiffonet import cli
from stiffonet.data import load_dataset
from stiffonet.training import TrainingDivergedError


def write_config(path, doc):
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return str(path)


SMALL_NET = {"strategy": "split", "branch": [21, 9, 9], "trunk": [2, 9, 9]}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data then train once; later tests reuse the artifacts."""
    root = tmp_path_factory.mktemp("cliws")
    data_cfg = write_config(
        root / "data.json",
        {
            "out": "data",
            "dataset": {
                "seed": 3,
                "per_scenario": 2,
                "ratio": 0.5,
                "schur_nodes": [1, 4, 7],
            },
        },
    )
    assert cli.main(["gen-data", "--config", data_cfg]) == 0
    train_cfg = write_config(
        root / "train.json",
        {
            "out": "run",
            "network": SMALL_NET,
            "loss": {"kind": "dd"},
            "train": {"dataset": "data", "epochs": 4, "batch_size": 2, "seed": 0},
        },
    )
    assert cli.main(["train", "--config", train_cfg]) == 0
    return root


class TestGenModel:
    def test_writes_model_and_echoes_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"out": "m", "model": {}})
        assert cli.main(["gen-model", "--config", cfg]) == 0
        assert "56 nodes" in capsys.readouterr().out
        doc = json.loads((tmp_path / "m" / "model.json").read_text())
        assert len(doc["nodes"]) == 56
        echoed = (tmp_path / "m" / "config.json").read_text()
        assert echoed == (tmp_path / "c.json").read_text()

    def test_custom_span(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json", {"out": "m", "model": {"span": 10.0}}
        )
        assert cli.main(["gen-model", "--config", cfg]) == 0
        doc = json.loads((tmp_path / "m" / "model.json").read_text())
        assert max(xy[0] for xy in doc["nodes"]) == 10.0

    def test_bad_material_is_config_error(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {"out": "m", "model": {"material": {"width": -1.0}}},
        )
        assert cli.main(["gen-model", "--config", cfg]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_out(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"model": {}})
        assert cli.main(["gen-model", "--config", cfg]) == 2


class TestGenData:
    def test_counts_and_reduced_forces(self, workspace):
        ds = load_dataset(workspace / "data")
        assert ds.n_samples == 6
        assert ds.split_info is not None and ds.scalers is not None
        assert ds.picked_nodes == [1, 4, 7]
        assert ds.fc.shape == (6, 9)

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": str(tmp_path / "data2"),
                "dataset": {
                    "seed": 3,
                    "per_scenario": 2,
                    "ratio": 0.5,
                    "schur_nodes": [1, 4, 7],
                },
            },
        )
        assert cli.main(["gen-data", "--config", cfg]) == 0
        a = (workspace / "data" / "manifest.json").read_bytes()
        b = (tmp_path / "data2" / "manifest.json").read_bytes()
        assert a == b

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {"out": "d", "dataset": {"seed": 3, "per_scenario": 2}},
        )
        assert cli.main(["gen-data", "--config", cfg, "--seed", "9"]) == 0
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert manifest["seed"] == 9

    def test_missing_model_file(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {"out": "d", "dataset": {"model": "nowhere/model.json", "per_scenario": 2}},
        )
        assert cli.main(["gen-data", "--config", cfg]) == 2

    def test_unknown_dataset_key(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json", {"out": "d", "dataset": {"bogus": 1}}
        )
        assert cli.main(["gen-data", "--config", cfg]) == 2
        assert "bogus" in capsys.readouterr().err


class TestTrain:
    def test_artifacts_present(self, workspace):
        run = workspace / "run"
        for name in ("report.json", "surrogate.json", "weights.f64", "config.json"):
            assert (run / name).exists(), name
        report = json.loads((run / "report.json").read_text())
        assert len(report["train_loss"]) == 4
        assert report["config"]["loss"]["kind"] == "dd"

    def test_rerun_weights_bit_identical(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": str(tmp_path / "run2"),
                "network": SMALL_NET,
                "train": {
                    "dataset": str(workspace / "data"),
                    "epochs": 4,
                    "batch_size": 2,
                    "seed": 0,
                },
            },
        )
        assert cli.main(["train", "--config", cfg]) == 0
        a = (workspace / "run" / "weights.f64").read_bytes()
        b = (tmp_path / "run2" / "weights.f64").read_bytes()
        assert a == b

    def test_invalid_loss_kind(self, workspace, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": "x",
                "loss": {"kind": "pinn"},
                "train": {"dataset": str(workspace / "data"), "epochs": 1},
            },
        )
        assert cli.main(["train", "--config", cfg]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_top_level_key(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {"out": "x", "trian": {}, "train": {"dataset": str(workspace / "data")}},
        )
        assert cli.main(["train", "--config", cfg]) == 2

    def test_unsplit_dataset_rejected(self, tmp_path):
        gen = write_config(
            tmp_path / "g.json", {"out": "bare", "dataset": {"per_scenario": 2}}
        )
        assert cli.main(["gen-data", "--config", gen]) == 0
        cfg = write_config(
            tmp_path / "t.json",
            {"out": "x", "network": SMALL_NET, "train": {"dataset": "bare", "epochs": 1}},
        )
        assert cli.main(["train", "--config", cfg]) == 2

    def test_numerical_failure_maps_to_exit_1(self, workspace, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise TrainingDivergedError("non-finite loss at epoch 0, batch 0")

        monkeypatch.setattr(cli, "train", boom)
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": "x",
                "network": SMALL_NET,
                "train": {"dataset": str(workspace / "data"), "epochs": 1},
            },
        )
        assert cli.main(["train", "--config", cfg]) == 1


class TestEval:
    def test_stats_and_field_export(self, workspace, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": str(tmp_path / "ev"),
                "eval": {
                    "dataset": str(workspace / "data"),
                    "surrogate": str(workspace / "run"),
                },
            },
        )
        assert cli.main(["eval", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "u_y:" in out and "%" in out
        stats = json.loads((tmp_path / "ev" / "stats.json").read_text())
        assert stats["n_samples"] == 3
        fields = list((tmp_path / "ev").glob("field_*.csv"))
        assert len(fields) == 1
        assert len(fields[0].read_text().splitlines()) == 57

    def test_missing_surrogate_dir(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": "ev",
                "eval": {"dataset": str(workspace / "data"), "surrogate": "nowhere"},
            },
        )
        assert cli.main(["eval", "--config", cfg]) == 2


class TestStudy:
    def test_batch_sweep_rows_and_timing_column(self, workspace, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": str(tmp_path / "study"),
                "study": {
                    "dataset": str(workspace / "data"),
                    "sweep": "batch",
                    "values": [2, 3],
                    "epochs": 2,
                },
            },
        )
        assert cli.main(["study", "--config", cfg]) == 0
        lines = (tmp_path / "study" / "study.csv").read_text().splitlines()
        assert len(lines) == 3
        header = lines[0].split(",")
        assert header[-1] == "seconds_per_1000_epochs"
        for line in lines[1:]:
            assert float(line.split(",")[-1]) > 0.0

    def test_layers_sweep_architectures(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": str(tmp_path / "study"),
                "study": {
                    "dataset": str(workspace / "data"),
                    "sweep": "layers",
                    "values": [2, 3],
                    "epochs": 1,
                    "batch_size": 3,
                },
            },
        )
        assert cli.main(["study", "--config", cfg]) == 0
        lines = (tmp_path / "study" / "study.csv").read_text().splitlines()
        assert lines[1].split(",")[2] == "21-48-48"
        assert lines[2].split(",")[2] == "21-48-48-48"

    def test_aspect_pair_formatting(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": str(tmp_path / "study"),
                "study": {
                    "dataset": str(workspace / "data"),
                    "sweep": "aspect",
                    "values": [[3, 10]],
                    "epochs": 1,
                    "batch_size": 3,
                },
            },
        )
        assert cli.main(["study", "--config", cfg]) == 0
        lines = (tmp_path / "study" / "study.csv").read_text().splitlines()
        row = lines[1].split(",")
        assert row[1] == "3x10"
        assert row[2] == "21-10-10-48"

    def test_bad_neuron_width(self, workspace, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "out": "s",
                "study": {
                    "dataset": str(workspace / "data"),
                    "sweep": "neurons",
                    "values": [7],
                    "epochs": 1,
                },
            },
        )
        assert cli.main(["study", "--config", cfg]) == 2


class TestUsage:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate", "--config", "x.json"])
        assert exc.value.code == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["gen-model", "--config", str(tmp_path / "no.json")]) == 2

    def test_invalid_json(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text("{not json")
        assert cli.main(["gen-model", "--config", str(bad)]) == 2

    def test_module_entry_point(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"out": "m", "model": {}})
        proc = subprocess.run(
            [sys.executable, "-m", "stiffonet", "gen-model", "--config", cfg],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert (tmp_path / "m" / "model.json").exists()

    def test_console_script_help(self):
        proc = subprocess.run(
            ["stiffonet", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "gen-data" in proc.stdout
