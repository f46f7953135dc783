import numpy as np
import pytest

from mddiff.cli import main
from mddiff.dataset import load_dataset


def run(argv):
    return main(list(argv))


@pytest.fixture()
def tiny_dataset(tmp_path):
    path = tmp_path / "tiny.mdds"
    code = run(["dataset", "--n", "30", "--mode", "vector", "--sup", "1.0",
                "--seed", "1", "--out", str(path)])
    assert code == 0
    return path


@pytest.fixture()
def tiny_checkpoint(tmp_path, tiny_dataset):
    out = tmp_path / "run"
    code = run(["train", "--data", str(tiny_dataset), "--out", str(out),
                "--epochs", "1", "--batch", "16", "--lr", "1e-3",
                "--hidden", "16", "--depth", "1", "--seed", "0"])
    assert code == 0
    return out / "best.mddc"


class TestDatasetCommand:
    def test_deterministic_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.mdds", tmp_path / "b.mdds"
        for out in (a, b):
            assert run(["dataset", "--n", "20", "--mode", "vector", "--sup", "0.4",
                        "--seed", "3", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(load_dataset(a)) == 20

    def test_writes_resolved_config(self, tmp_path):
        out = tmp_path / "d.mdds"
        run(["dataset", "--n", "5", "--mode", "vector", "--sup", "1.0",
             "--out", str(out)])
        text = (tmp_path / "d.mdds.config.txt").read_text()
        assert "n=5\n" in text and "mode=vector\n" in text

    def test_bad_sup_fraction_is_config_error(self, tmp_path):
        assert run(["dataset", "--n", "10", "--sup", "1.5",
                    "--out", str(tmp_path / "x.mdds")]) == 2

    def test_unsplittable_remainder_is_config_error(self, tmp_path):
        assert run(["dataset", "--n", "10", "--sup", "0.8", "--mode", "vector",
                    "--out", str(tmp_path / "x.mdds")]) == 2


class TestTrainCommand:
    def test_artifacts_written(self, tmp_path, tiny_checkpoint):
        out = tiny_checkpoint.parent
        assert (out / "last.mddc").exists()
        assert (out / "loss.csv").exists()
        assert (out / "run_config.txt").exists()
        assert (out / "input_hashes.txt").read_text().startswith("dataset=")

    def test_missing_dataset_is_config_error(self, tmp_path):
        assert run(["train", "--data", str(tmp_path / "none.mdds"),
                    "--out", str(tmp_path / "r"), "--epochs", "1"]) == 2

    def test_needs_epochs_or_steps(self, tmp_path, tiny_dataset):
        assert run(["train", "--data", str(tiny_dataset),
                    "--out", str(tmp_path / "r")]) == 2

    def test_steps_flag_limits_run(self, tmp_path, tiny_dataset):
        out = tmp_path / "steps_run"
        assert run(["train", "--data", str(tiny_dataset), "--out", str(out),
                    "--steps", "3", "--batch", "8", "--hidden", "16",
                    "--depth", "1"]) == 0
        lines = (out / "loss.csv").read_text().splitlines()
        train_rows = [ln for ln in lines if ",train," in ln]
        assert len(train_rows) == 3


class TestSampleCommand:
    def test_outputs_and_metadata(self, tmp_path, tiny_dataset, tiny_checkpoint):
        out = tmp_path / "gen"
        assert run(["sample", "--ck", str(tiny_checkpoint), "--data", str(tiny_dataset),
                    "--cond", "A", "--phi", "constant", "--c", "0.0",
                    "--steps", "5", "--n", "4", "--out", str(out)]) == 0
        gen_b = np.loadtxt(out / "generated_B.csv", delimiter=",")
        assert gen_b.shape == (4, 8)
        assert (out / "generated_C.csv").exists()
        meta = (out / "generation_meta.txt").read_text()
        assert "checkpoint_hash=" in meta and "phi_family=constant" in meta

    def test_bad_condition_set(self, tmp_path, tiny_dataset, tiny_checkpoint):
        assert run(["sample", "--ck", str(tiny_checkpoint), "--data", str(tiny_dataset),
                    "--cond", "ABC", "--out", str(tmp_path / "g")]) == 2
        assert run(["sample", "--ck", str(tiny_checkpoint), "--data", str(tiny_dataset),
                    "--cond", "D", "--out", str(tmp_path / "g")]) == 2

    def test_missing_checkpoint(self, tmp_path, tiny_dataset):
        assert run(["sample", "--ck", str(tmp_path / "no.mddc"),
                    "--data", str(tiny_dataset), "--out", str(tmp_path / "g")]) == 2


class TestEvalAndSweep:
    def test_supervision_protocol(self, tmp_path, tiny_dataset, tiny_checkpoint):
        out = tmp_path / "ev"
        assert run(["eval", "--protocol", "supervision", "--data", str(tiny_dataset),
                    "--cell", f"MDD:1.0:{tiny_checkpoint}",
                    "--n-eval", "3", "--seeds", "0", "--steps", "4",
                    "--out", str(out)]) == 0
        assert (out / "supervision_sweep.csv").exists()
        assert (out / "supervision_sweep_summary.csv").exists()

    def test_supervision_needs_cells(self, tmp_path, tiny_dataset):
        assert run(["eval", "--protocol", "supervision", "--data", str(tiny_dataset),
                    "--out", str(tmp_path / "ev")]) == 2

    def test_malformed_cell(self, tmp_path, tiny_dataset):
        assert run(["eval", "--protocol", "supervision", "--data", str(tiny_dataset),
                    "--cell", "justonefield", "--out", str(tmp_path / "ev")]) == 2

    def test_bridge_protocol(self, tmp_path, tiny_dataset, tiny_checkpoint):
        out = tmp_path / "br"
        assert run(["eval", "--protocol", "bridge", "--data", str(tiny_dataset),
                    "--ck", str(tiny_checkpoint), "--n-eval", "2", "--seeds", "0",
                    "--steps", "6", "--snapshots", "3", "--out", str(out)]) == 0
        assert (out / "bridge.csv").exists()
        assert len(list(out.glob("step*_B.csv"))) == 3

    def test_phi_sweep(self, tmp_path, tiny_dataset, tiny_checkpoint):
        out = tmp_path / "sw"
        assert run(["sweep", "--ck", str(tiny_checkpoint), "--data", str(tiny_dataset),
                    "--n-eval", "2", "--seeds", "0", "--steps", "3",
                    "--out", str(out)]) == 0
        assert (out / "phi_sweep.csv").exists()
        assert (out / "phi_sweep.svg").exists()


class TestConfigHandling:
    def test_config_file_supplies_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n=12\nmode=vector\nsup=1.0\nseed=4\n")
        out = tmp_path / "d.mdds"
        assert run(["--config", str(cfg), "dataset", "--out", str(out)]) == 0
        assert len(load_dataset(out)) == 12

    def test_cli_overrides_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n=12\nmode=vector\nsup=1.0\n")
        out = tmp_path / "d.mdds"
        assert run(["--config", str(cfg), "dataset", "--n", "7",
                    "--out", str(out)]) == 0
        assert len(load_dataset(out)) == 7

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n=12\nturbo=yes\n")
        assert run(["--config", str(cfg), "dataset",
                    "--out", str(tmp_path / "d.mdds")]) == 2

    def test_malformed_config_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("this is not key value\n")
        assert run(["--config", str(cfg), "dataset",
                    "--out", str(tmp_path / "d.mdds")]) == 2

    def test_missing_config_file(self, tmp_path):
        assert run(["--config", str(tmp_path / "none.cfg"), "dataset",
                    "--out", str(tmp_path / "d.mdds")]) == 2

    def test_unknown_flag_exit_2(self, tmp_path):
        assert run(["dataset", "--frobnicate", "--out", str(tmp_path / "d.mdds")]) == 2

    def test_out_root_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MDDIFF_OUT_ROOT", str(tmp_path))
        assert run(["dataset", "--n", "5", "--mode", "vector", "--sup", "1.0",
                    "--out", "sub/d.mdds"]) == 0
        assert (tmp_path / "sub" / "d.mdds").exists()

    def test_absolute_path_ignores_out_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MDDIFF_OUT_ROOT", str(tmp_path / "root"))
        out = tmp_path / "abs.mdds"
        assert run(["dataset", "--n", "5", "--mode", "vector", "--sup", "1.0",
                    "--out", str(out)]) == 0
        assert out.exists()
