import json
import subprocess
import sys

import pytest

from groupact import load_dataset, load_params
from groupact.cli import main


def run(*argv) -> int:
    return main(list(argv))


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.jsonl"
    params = root / "params.json"
    assert run(
        "gen-data", "--classes", "4", "--train-per-class", "6", "--test-per-class", "3",
        "--persons", "5", "--frames", "3", "--dim", "8", "--noise", "0.15",
        "--appearance-scale", "1.0", "--seed", "5", "--out", str(data),
    ) == 0
    assert run(
        "pretrain", "--dataset", str(data), "--epochs", "3", "--batch-size", "8",
        "--seed", "5", "--out", str(params),
    ) == 0
    return root, data, params


class TestGenData:
    def test_output_passes_load_validation(self, workdir):
        _, data, _ = workdir
        ds = load_dataset(data)
        assert len(ds.videos) == 4 * 9
        header = read_jsonl(data)[0]
        assert header["meta"]["seed"] == 5
        assert "tool_version" in header["meta"] and "config_hash" in header["meta"]
        assert data.with_name(data.name + ".sidecar.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        flags = ["--classes", "2", "--train-per-class", "2", "--test-per-class", "1",
                 "--persons", "4", "--frames", "2", "--dim", "8", "--seed", "9"]
        assert run("gen-data", *flags, "--out", str(a)) == 0
        assert run("gen-data", *flags, "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_video_count_by_independent_file_scan(self, tmp_path):
        out = tmp_path / "scan.jsonl"
        assert run(
            "gen-data", "--classes", "4", "--train-per-class", "3", "--test-per-class", "2",
            "--persons", "3", "--frames", "2", "--dim", "4", "--out", str(out),
        ) == 0
        records = read_jsonl(out)
        assert records[0]["kind"] == "dataset"
        video_rows = [r for r in records[1:] if "id" in r]
        assert len(video_rows) == 4 * 5

    def test_invalid_dim_exits_2(self, tmp_path):
        assert run("gen-data", "--dim", "10", "--out", str(tmp_path / "x.jsonl")) == 2

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"classes": 3, "train_per_class": 2, "test_per_class": 1,
                                   "persons": 3, "frames": 2, "dim": 4, "seed": 1}))
        out = tmp_path / "cfg-data.jsonl"
        assert run("gen-data", "--config", str(cfg), "--classes", "2",
                   "--out", str(out)) == 0
        ds = load_dataset(out)
        assert len(ds.class_catalog) == 2  # flag wins over config file
        assert len(ds.videos) == 2 * 3     # config file fills the rest


class TestPretrainCmd:
    def test_params_load_and_embed(self, workdir):
        _, data, params_path = workdir
        params = load_params(params_path)
        ds = load_dataset(data)
        assert params.feature_dim == ds.feature_dim
        doc = json.loads(params_path.read_text())
        assert len(doc["meta"]["loss_history"]) == 3

    def test_same_seed_byte_identical(self, workdir, tmp_path):
        _, data, _ = workdir
        a = tmp_path / "pa.json"
        b = tmp_path / "pb.json"
        for out in (a, b):
            assert run("pretrain", "--dataset", str(data), "--epochs", "2",
                       "--batch-size", "8", "--seed", "3", "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_dataset_exits_2(self, tmp_path):
        assert run("pretrain", "--dataset", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "p.json")) == 2


class TestRunProtocolCmd:
    def test_report_contains_requested_variants(self, workdir, tmp_path):
        _, data, params = workdir
        out = tmp_path / "proto"
        assert run(
            "run-protocol", "--dataset", str(data), "--params", str(params),
            "--variants", "ours,random", "--trials", "1", "--k", "3,5",
            "--queries", "2", "--select", "2", "--n-extra", "2", "--n-masked", "1",
            "--patterns", "2", "--ft-epochs", "2", "--ft-lr", "0.001",
            "--seed", "0", "--out", str(out),
        ) == 0
        table = (out / "report.txt").read_text()
        for variant in ("pretrained", "ours", "random"):
            assert variant in table
        records = read_jsonl(out / "records.jsonl")
        assert records[0]["kind"] == "protocol-meta"
        trial_rows = records[1:]
        assert len(trial_rows) == 3 * 4  # variants (incl. baseline) x classes

    def test_rerun_byte_identical_records(self, workdir, tmp_path):
        _, data, params = workdir
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run(
                "run-protocol", "--dataset", str(data), "--params", str(params),
                "--variants", "random", "--trials", "1", "--k", "3",
                "--queries", "2", "--select", "2", "--ft-epochs", "1",
                "--seed", "4", "--out", str(out),
            ) == 0
            outs.append((out / "records.jsonl").read_bytes())
        assert outs[0] == outs[1]


class TestSweepCmd:
    def test_sweep_emits_table_and_records(self, workdir, tmp_path):
        _, data, params = workdir
        out = tmp_path / "sweep"
        assert run(
            "sweep", "--dataset", str(data), "--params", str(params),
            "--trials", "1", "--k", "3", "--queries", "2", "--select", "2",
            "--n-extra", "2", "--patterns", "2", "--ft-epochs", "1",
            "--nv-values", "1,2", "--ne-values", "2",
            "--seed", "0", "--out", str(out),
        ) == 0
        records = read_jsonl(out / "sweep_records.jsonl")
        assert records[0]["kind"] == "sweep-meta"
        assert [(r["parameter"], r["value"]) for r in records[1:]] == [
            ("n_masked", 1), ("n_masked", 2), ("n_extra", 2),
        ]
        assert (out / "sweep.txt").read_text().count("n_masked") >= 2


class TestExportEmbeddings:
    def test_row_count_equals_video_count(self, workdir, tmp_path):
        _, data, params = workdir
        out = tmp_path / "emb.jsonl"
        assert run("export-embeddings", "--dataset", str(data), "--params", str(params),
                   "--out", str(out)) == 0
        records = read_jsonl(out)
        ds = load_dataset(data)
        rows = [r for r in records if r.get("kind") != "embeddings-meta"]
        assert len(rows) == len(ds.videos)
        assert all(len(r["gaf"]) == 2 * ds.feature_dim for r in rows)


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert run("frobnicate") == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run("gen-data", "--bogus") == 1

    def test_help_exits_zero(self, capsys):
        assert run("--help") == 0

    def test_module_entrypoint(self):
        proc = subprocess.run(
            [sys.executable, "-m", "groupact.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.strip()
