import json
from pathlib import Path

import numpy as np
import pytest

from adaptcl.cli import main

TINY_CFG = """
data.input_dim = 8
data.n_pretrain_classes = 4
data.n_incremental_classes = 4
data.n_tasks = 2
data.train_per_class = 15
data.test_per_class = 8
data.sigma = 0.3
data.domain_shift = 2.0
data.seed = 1
model.embed_dim = 6
model.hidden = 12
model.adapter_rank = 3
pretrain.epochs = 5
adapt.epochs = 1
adapt.batch_size = 8
adapt.modes = acl
run.seeds = 11
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


class TestConfigErrors:
    def test_missing_required_key(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("data.sigma = 0.3\n")
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("run.seeds = 1\nnot.a.key = 2\n")
        assert main(["run", "--config", str(path)]) == 2

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("run.seeds = 1\ndata.sigma = -1\n")
        assert main(["run", "--config", str(path)]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


class TestRun:
    def test_run_produces_artifacts(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(tiny_config), "--out", str(out)]) == 0
        assert (out / "accuracy_matrix_11.csv").exists()
        assert (out / "metrics.csv").exists()
        assert (out / "bounds.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"]["seed=11,mode=acl"] == "ok"
        assert "metrics.csv" in manifest["files"]

    def test_matrix_format(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(tiny_config), "--out", str(out)])
        lines = (out / "accuracy_matrix_11.csv").read_text().splitlines()
        assert lines[0] == "after_task,task_1,task_2,status"
        row1 = lines[1].split(",")
        assert row1[0] == "1" and row1[2] == "" and row1[3] == "ok"

    def test_disabled_baseline_no_bound_rows(self, tiny_config, tmp_path):
        cfg = tiny_config.read_text().replace("adapt.modes = acl", "adapt.modes = disabled")
        path = tiny_config.parent / "disabled.cfg"
        path.write_text(cfg)
        out = tmp_path / "out_disabled"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        bounds = (out / "bounds.csv").read_text().splitlines()
        assert bounds == ["context,lhs,rhs,slack,pass"]

    def test_bounds_rows_pass(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(tiny_config), "--out", str(out)])
        rows = (out / "bounds.csv").read_text().splitlines()[1:]
        assert rows
        for row in rows:
            assert row.endswith(",True")

    def test_byte_identical_reruns(self, tiny_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", str(tiny_config), "--out", str(out1)])
        main(["run", "--config", str(tiny_config), "--out", str(out2)])
        for name in ("accuracy_matrix_11.csv", "metrics.csv", "bounds.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_adapt_report_csv(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(tiny_config), "--out", str(out)])
        lines = (out / "adapt_report_acl_11.csv").read_text().splitlines()
        assert lines[0] == "task,epoch,mean_loss,bound_lhs,bound_rhs,markov_lhs,markov_rhs"
        assert len(lines) > 1
        for line in lines[1:]:
            fields = line.split(",")
            assert len(fields) == 7
            assert all(np.isfinite(float(v)) for v in fields[2:])

    def test_plasticity_variant_immediate(self, tiny_config, tmp_path):
        cfg = tiny_config.read_text() + "metrics.plasticity = immediate\n"
        path = tiny_config.parent / "imm.cfg"
        path.write_text(cfg)
        out = tmp_path / "out_imm"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0

    def test_plasticity_variant_invalid(self, tiny_config, tmp_path):
        cfg = tiny_config.read_text() + "metrics.plasticity = nope\n"
        path = tiny_config.parent / "bad_plas.cfg"
        path.write_text(cfg)
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "x")]) == 2

    def test_seeds_override(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        assert (
            main(
                [
                    "run",
                    "--config",
                    str(tiny_config),
                    "--seeds",
                    "5,6",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        metrics = (out / "metrics.csv").read_text().splitlines()
        assert len(metrics) == 3  # header + 2 seeds


class TestSweep:
    def test_temperature_sweep(self, tiny_config, tmp_path):
        out = tmp_path / "sweep"
        assert (
            main(
                [
                    "sweep",
                    "--config",
                    str(tiny_config),
                    "--axis",
                    "temperature",
                    "--values",
                    "0.1,0.5",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        agg = (out / "sweep.csv").read_text().splitlines()
        assert agg[0] == "axis,value,seed,mode,LA,AIA"
        assert len(agg) == 3
        assert (out / "sweep_temperature_0.1" / "metrics.csv").exists()

    def test_single_value_equals_run(self, tiny_config, tmp_path):
        out = tmp_path / "sweep1"
        assert (
            main(
                [
                    "sweep",
                    "--config",
                    str(tiny_config),
                    "--axis",
                    "epochs",
                    "--values",
                    "1",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        assert (out / "sweep.csv").exists()


class TestVerify:
    def test_verify_passes(self, capsys):
        sizes = (
            "lemma1_pairs=100,lemma2_sets=3,threshold_draws=200,"
            "markov_batches=10,stability_draws=50,grad_seeds=1,grad_probes=2"
        )
        assert main(["verify", "--seed", "0", "--sizes", sizes]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_verify_zero_sizes_warns(self, capsys):
        sizes = (
            "lemma1_pairs=0,lemma2_sets=0,threshold_draws=0,"
            "markov_batches=0,stability_draws=0,grad_seeds=0"
        )
        assert main(["verify", "--sizes", sizes]) == 0
        assert "warning" in capsys.readouterr().err


class TestDumpEmbeddings:
    def test_dump(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(tiny_config), "--out", str(out)])
        emb = tmp_path / "embeddings.csv"
        assert (
            main(
                [
                    "dump-embeddings",
                    "--config",
                    str(tiny_config),
                    "--checkpoint",
                    str(out / "model_acl_11.ckpt"),
                    "--out",
                    str(emb),
                ]
            )
            == 0
        )
        lines = emb.read_text().splitlines()
        # 2 tasks x 2 classes x (15 train + 8 test) samples
        assert len(lines) == 1 + 2 * 2 * 23
        for line in lines[1:5]:
            vec = np.array([float(v) for v in line.split(",")[3:]])
            assert abs(np.linalg.norm(vec) - 1.0) <= 1e-9

    def test_bad_checkpoint(self, tiny_config, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_text("not a checkpoint")
        assert (
            main(
                [
                    "dump-embeddings",
                    "--config",
                    str(tiny_config),
                    "--checkpoint",
                    str(bad),
                ]
            )
            == 1
        )
