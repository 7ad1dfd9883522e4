import gzip
import json
import struct

import numpy as np
import pytest

from descent.cli import main

RIDGELESS_DOC = {"model": "ridgeless", "r": 1.0, "sigma": 0.5, "psi": 0.5, "phi": 1.0}


@pytest.fixture()
def model_file(tmp_path):
    path = tmp_path / "ridgeless.json"
    path.write_text(json.dumps(RIDGELESS_DOC))
    return str(path)


class TestTheory:
    def test_csv_output_with_echo(self, tmp_path, model_file):
        out = tmp_path / "curve.csv"
        code = main(["theory", "--model", model_file, "--lambda", "1e-3",
                     "--r0", "1", "--out", str(out), "--nodes", "64"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,gen_error,train_error,B0,B1,H0,H1"
        assert len(lines) == 61  # default grid has 60 points
        meta = json.loads((tmp_path / "curve.csv.meta.json").read_text())
        assert meta["config"]["lam"] == 1e-3

    def test_json_embeds_config(self, tmp_path, model_file):
        out = tmp_path / "curve.json"
        code = main(["theory", "--model", model_file, "--times", "0.1:10:4",
                     "--out", str(out), "--format", "json", "--nodes", "64"])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["model"] == model_file
        assert len(doc["times"]) == 4

    def test_inline_model(self, tmp_path):
        out = tmp_path / "c.csv"
        code = main(["theory", "--model", json.dumps(RIDGELESS_DOC),
                     "--times", "1:10:3", "--out", str(out), "--nodes", "64"])
        assert code == 0

    def test_invalid_model_exit_1(self, tmp_path):
        code = main(["theory", "--model", '{"model": "nope"}',
                     "--out", str(tmp_path / "x.csv")])
        assert code == 1

    def test_numerical_failure_exit_2(self, tmp_path, model_file):
        # lambda = 0 is rejected by the contour layer as a numerical guard
        code = main(["theory", "--model", model_file, "--lambda", "0",
                     "--out", str(tmp_path / "x.csv")])
        assert code in (1, 2)


class TestSweep:
    def test_long_format(self, tmp_path, model_file, monkeypatch):
        monkeypatch.setenv("DESCENT_THREADS", "1")
        out = tmp_path / "sweep.csv"
        code = main(["sweep", "--model", model_file, "--phi", "0.4:0.8:2",
                     "--lambda", "1e-2", "--times", "1:100:3",
                     "--out", str(out), "--nodes", "64"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "phi,t,gen_error,train_error"
        assert len(lines) == 1 + 2 * 3


class TestEigdist:
    def test_density_csv(self, tmp_path, model_file):
        out = tmp_path / "eig.csv"
        code = main(["eigdist", "--model", model_file, "--x", "0.1:20:12",
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x,rho_log"
        assert len(lines) == 13


class TestSimulate:
    def test_trajectories_and_aggregate(self, tmp_path, model_file):
        out = tmp_path / "sims"
        code = main(["simulate", "--model", model_file, "--d", "100",
                     "--seeds", "2", "--lambda", "1e-2", "--times", "0.1:10:4",
                     "--out", str(out)])
        assert code == 0
        assert (out / "trajectory_seed0.csv").exists()
        assert (out / "trajectory_seed1.csv").exists()
        agg = json.loads((out / "aggregate.json").read_text())
        assert len(agg["gen_mean"]) == 4
        assert agg["config"]["d"] == 100


class TestPencil:
    def test_solve_and_sample(self, tmp_path):
        from descent.pencil import marchenko_pastur_pencil

        spec_path = tmp_path / "mp.json"
        marchenko_pastur_pencil(2j, 0.5, total=60).to_json(spec_path)
        out = tmp_path / "sol.json"
        assert main(["pencil", "--spec", str(spec_path), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        g = doc["g_real"][0][0] + 1j * doc["g_imag"][0][0]
        assert abs(2j * g**2 + (2j + 1 - 2.0) * g + 1) < 1e-8
        out2 = tmp_path / "mc.json"
        assert main(["pencil", "--spec", str(spec_path), "--sample", "0",
                     "--out", str(out2)]) == 0


class TestDataset:
    def test_theory_pipeline_on_synthetic_idx(self, tmp_path):
        rng = np.random.default_rng(0)
        n, side = 400, 5
        images = rng.integers(0, 255, size=(n, side, side), dtype=np.uint8)
        labels = rng.integers(0, 10, size=n, dtype=np.uint8)

        def idx_bytes(magic, dims, payload):
            head = struct.pack(">I", magic) + b"".join(
                struct.pack(">I", d) for d in dims)
            return head + bytes(payload)

        img = tmp_path / "img.idx"
        lab = tmp_path / "lab.idx"
        img.write_bytes(idx_bytes(0x803, (n, side, side), images.tobytes()))
        lab.write_bytes(idx_bytes(0x801, (n,), labels.tobytes()))
        out = tmp_path / "ds"
        code = main(["dataset", "--images", str(img), "--labels", str(lab),
                     "--n", "30", "--lambda", "1e-1", "--times", "0.1:50:5",
                     "--nodes", "64", "--runs", "2", "--dt", "0.05",
                     "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert "empirical" in summary
        theory = json.loads((out / "theory.json").read_text())
        assert len(theory["gen_error"]) == 5

    def test_missing_files_exit_1(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DESCENT_DATA_DIR", str(tmp_path))
        code = main(["dataset", "--n", "10", "--out", str(tmp_path / "o")])
        assert code == 1
