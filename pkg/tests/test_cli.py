"""Command-line interface: formats, exit codes, manifests, determinism."""

import csv
import json

import numpy as np
import pytest

from slabvi.cli import main


def _write_inputs(tmp_path, beta_hat=(0.5, 2.0, -0.3)):
    bh = tmp_path / "beta_hat.txt"
    bh.write_text("".join(f"{v}\n" for v in beta_hat))
    corr = tmp_path / "corr.csv"
    corr.write_text("1.0,0.2,0.1\n0.2,1.0,0.05\n0.1,0.05,1.0\n")
    return bh, corr


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _masked_records_bytes(path, column):
    """File content with one column blanked, for timing-free comparison."""
    rows = _read_csv(path)
    idx = rows[0].index(column)
    for row in rows[1:]:
        if len(row) > idx:
            row[idx] = ""
    return "\n".join(",".join(r) for r in rows)


class TestFitGls:
    def test_output_contract(self, tmp_path):
        bh, corr = _write_inputs(tmp_path)
        out = tmp_path / "out"
        assert main(["fit-gls", "--beta-hat", str(bh), "--corr", str(corr),
                     "--out", str(out)]) == 0
        rows = _read_csv(out / "posterior.csv")
        assert rows[0] == ["index", "psi", "mu", "s2", "post_mean"]
        assert len(rows) == 4
        # posterior mean respects the sparse moment rule
        for row in rows[1:]:
            psi, mu, mean = float(row[1]), float(row[2]), float(row[4])
            assert mean == pytest.approx((1 - psi) * mu, rel=1e-12, abs=1e-300)
        trace = _read_csv(out / "elbo_trace.csv")
        assert trace[0] == ["sweep", "elbo"]
        assert (out / "elbo_trace.png").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "fit-gls"
        assert "config_digest" in manifest and "elbo_constants_dropped" in manifest

    def test_naive_requires_positive_sigma0(self, tmp_path):
        bh, corr = _write_inputs(tmp_path)
        code = main(["fit-gls", "--beta-hat", str(bh), "--corr", str(corr),
                     "--scheme", "naive", "--sigma0", "0",
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_malformed_vector(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("1.0\nnot-a-number\n")
        _, corr = _write_inputs(tmp_path)
        code = main(["fit-gls", "--beta-hat", str(bad), "--corr", str(corr),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_dimension_mismatch(self, tmp_path):
        bh = tmp_path / "bh.txt"
        bh.write_text("1.0\n2.0\n")
        _, corr = _write_inputs(tmp_path)
        code = main(["fit-gls", "--beta-hat", str(bh), "--corr", str(corr),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_missing_file(self, tmp_path):
        _, corr = _write_inputs(tmp_path)
        code = main(["fit-gls", "--beta-hat", str(tmp_path / "nope.txt"),
                     "--corr", str(corr), "--out", str(tmp_path / "o")])
        assert code == 2


class TestFitPpca:
    def test_output_contract(self, tmp_path):
        rng = np.random.default_rng(0)
        data = tmp_path / "data.csv"
        x = rng.normal(size=(15, 8))
        data.write_text("\n".join(",".join(repr(float(v)) for v in row)
                                  for row in x) + "\n")
        out = tmp_path / "out"
        assert main(["fit-ppca", "--data", str(data), "-k", "2",
                     "--sigma1", "0.5", "--p0", "0.9", "--sweeps", "30",
                     "--out", str(out)]) == 0
        scores = _read_csv(out / "scores.csv")
        assert scores[0] == ["index", "score_0", "score_1"]
        assert len(scores) == 16
        loadings = _read_csv(out / "loadings.csv")
        assert loadings[0] == ["index", "component", "psi", "mu", "s2", "e_w"]
        assert len(loadings) == 8 * 2 + 1
        assert (out / "manifest.json").exists()

    def test_rank_deficient_is_input_error(self, tmp_path):
        data = tmp_path / "data.csv"
        data.write_text("\n".join("0.0,0.0,0.0" for _ in range(5)) + "\n")
        code = main(["fit-ppca", "--data", str(data), "-k", "1",
                     "--out", str(tmp_path / "o")])
        assert code == 2


class TestThresholdCurve:
    def test_contract_and_oracle_equality(self, tmp_path):
        out = tmp_path / "tc"
        assert main(["threshold-curve", "--grid-max", "1.0",
                     "--out", str(out)]) == 0
        rows = _read_csv(out / "curve.csv")
        assert rows[0] == ["beta_hat", "naive_mean", "sparse_mean", "exact_mean"]
        assert len(rows) == 22  # 0.0 .. 1.0 step 0.05 inclusive
        for row in rows[1:]:
            sparse, exact = float(row[2]), float(row[3])
            assert abs(sparse - exact) < 1e-6
        assert (out / "curve.png").exists()

    def test_single_point_grid(self, tmp_path):
        out = tmp_path / "tc0"
        assert main(["threshold-curve", "--grid-min", "0", "--grid-max", "0",
                     "--out", str(out)]) == 0
        rows = _read_csv(out / "curve.csv")
        assert [float(v) for v in rows[1]] == [0.0, 0.0, 0.0, 0.0]

    def test_zero_sigma0_rejected(self, tmp_path):
        assert main(["threshold-curve", "--sigma0", "0",
                     "--out", str(tmp_path / "o")]) == 2


class TestBench:
    def test_gls_smoke_contract(self, tmp_path):
        out = tmp_path / "bench"
        assert main(["bench-gls", "--preset", "smoke", "--replicates", "2",
                     "--seed", "5", "--out", str(out)]) == 0
        rows = _read_csv(out / "records.csv")
        assert rows[0] == ["replicate", "method", "sigma_e2", "mse",
                           "correlation", "elapsed_ms", "error"]
        assert len(rows) == 1 + 2 * 5  # 2 replicates x 5 methods
        assert (out / "summary.csv").exists()
        assert (out / "benchmark.png").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["replicates"] == 2
        assert manifest["seed"] == 5

    def test_ppca_smoke_contract(self, tmp_path):
        out = tmp_path / "bench"
        assert main(["bench-ppca", "--preset", "smoke", "--seed", "4",
                     "--out", str(out)]) == 0
        rows = _read_csv(out / "records.csv")
        assert rows[0] == ["replicate", "method", "mse", "correlation",
                           "reconstruction_error", "elapsed_ms", "error"]
        methods = {row[1] for row in rows[1:]}
        assert methods == {"classical", "oracle", "sparse", "naive-0.05",
                           "naive-1e-08"}

    def test_gls_rerun_identical_data(self, tmp_path):
        args = ["bench-gls", "--preset", "smoke", "--replicates", "2",
                "--seed", "11"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        a = _masked_records_bytes(out1 / "records.csv", "elapsed_ms")
        b = _masked_records_bytes(out2 / "records.csv", "elapsed_ms")
        assert a == b
        ma = json.loads((out1 / "manifest.json").read_text())
        mb = json.loads((out2 / "manifest.json").read_text())
        assert ma["config_digest"] == mb["config_digest"]

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("p_dim: 20\nwishart_df: 20\np0: 0.9\nreplicates: 4\n"
                       "sigma_e2_grid: [0.5]\nsigma_0_2_grid: [1.0]\nsweeps: 30\n")
        out = tmp_path / "bench"
        assert main(["bench-gls", "--config", str(cfg), "--replicates", "1",
                     "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["p_dim"] == 20
        assert manifest["config"]["replicates"] == 1  # flag wins

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("p_dims: 20\n")
        assert main(["bench-gls", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 2

    def test_invalid_config_value_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("p_dim: 100\nwishart_df: 50\n")
        assert main(["bench-gls", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 2


class TestFailureModes:
    def test_numerical_divergence_maps_to_exit_3(self, tmp_path, monkeypatch):
        import slabvi.cli as cli
        from slabvi.errors import NumericalDivergenceError

        def boom(*args, **kwargs):
            raise NumericalDivergenceError("synthetic blow-up", location=3)

        monkeypatch.setattr(cli, "fit_gls_sparse", boom)
        bh, corr = _write_inputs(tmp_path)
        code = main(["fit-gls", "--beta-hat", str(bh), "--corr", str(corr),
                     "--out", str(tmp_path / "o")])
        assert code == 3

    def test_interrupt_leaves_truncation_marker(self, tmp_path):
        from slabvi.cli import _stream_records
        from slabvi.report import TRUNCATION_MARKER
        from slabvi.simbench import BenchmarkRecord
        from slabvi.report import gls_record_rows

        def records():
            yield BenchmarkRecord(0, "sparse", mse=0.1, correlation=0.5,
                                  sigma_e2=0.5)
            yield BenchmarkRecord(1, "sparse", mse=0.2, correlation=0.4,
                                  sigma_e2=0.5)
            raise KeyboardInterrupt

        path = tmp_path / "records.csv"
        with pytest.raises(KeyboardInterrupt):
            _stream_records(path, ["replicate", "method", "sigma_e2", "mse",
                                   "correlation", "elapsed_ms", "error"],
                            records(), gls_record_rows)
        lines = path.read_text().splitlines()
        assert len(lines) == 4  # header + 2 records + marker
        assert lines[-1] == TRUNCATION_MARKER

    def test_naive_ppca_scheme_via_cli(self, tmp_path):
        rng = np.random.default_rng(1)
        data = tmp_path / "data.csv"
        x = rng.normal(size=(12, 7))
        data.write_text("\n".join(",".join(repr(float(v)) for v in row)
                                  for row in x) + "\n")
        out = tmp_path / "out"
        assert main(["fit-ppca", "--data", str(data), "-k", "1",
                     "--scheme", "naive", "--sigma0", "0.05", "--p0", "0.9",
                     "--sweeps", "20", "--out", str(out)]) == 0
        rows = _read_csv(out / "loadings.csv")
        # naive loading mean carries no psi weighting: e_w == mu
        for row in rows[1:]:
            assert float(row[5]) == pytest.approx(float(row[3]), rel=1e-12)

    def test_naive_ppca_requires_sigma0(self, tmp_path):
        rng = np.random.default_rng(2)
        data = tmp_path / "data.csv"
        x = rng.normal(size=(10, 6))
        data.write_text("\n".join(",".join(repr(float(v)) for v in row)
                                  for row in x) + "\n")
        assert main(["fit-ppca", "--data", str(data), "-k", "1",
                     "--scheme", "naive", "--out", str(tmp_path / "o")]) == 2


class TestCsvHygiene:
    def test_lf_line_endings_and_dot_decimals(self, tmp_path):
        bh, corr = _write_inputs(tmp_path)
        out = tmp_path / "out"
        main(["fit-gls", "--beta-hat", str(bh), "--corr", str(corr),
              "--out", str(out)])
        raw = (out / "posterior.csv").read_bytes()
        assert b"\r" not in raw
        assert b"," in raw and b";" not in raw
