"""Front-end contracts: config schema enforcement, lossless CSV round
trips, validation errors that name the offending line or id, artifact
emission, rerun determinism, and failure reporting in the manifest."""

import filecmp
import json
import os

import numpy as np
import pandas as pd
import pytest

from curvemix import cli
from curvemix.cli import (
    CliError,
    ingest_covariates,
    ingest_curves,
    parse_config,
    read_truth,
)
from curvemix.model import CurveData
from curvemix.sampler import SamplerError
from curvemix.simgen import generate_dataset


class TestParseConfig:
    def test_defaults_and_overrides(self):
        cfg = parse_config("mode = mfppmx\nseed = 11\nrepulsion = 1,2\n")
        assert cfg["mode"] == "mfppmx"
        assert cfg["seed"] == 11
        assert cfg["repulsion"] == [1.0, 2.0]
        assert cfg["chains"] == 1          # untouched default
        assert cfg["covariates"] is False

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\n  n_burn = 5\n")
        assert cfg["n_burn"] == 5

    def test_unknown_key_names_line(self):
        with pytest.raises(CliError, match="line 2: unknown key 'phi'"):
            parse_config("seed = 1\nphi = 3\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(CliError, match="duplicate key 'seed'"):
            parse_config("seed = 1\nseed = 2\n")

    def test_bad_value_and_missing_equals(self):
        with pytest.raises(CliError, match="bad value for 'n_burn'"):
            parse_config("n_burn = soon\n")
        with pytest.raises(CliError, match="expected key = value"):
            parse_config("just some words\n")
        with pytest.raises(CliError, match="bad value for 'covariates'"):
            parse_config("covariates = yes\n")


def _tiny_data(rng=0, m=6, n=9, D=2):
    gen = np.random.default_rng(rng)
    return CurveData([gen.normal(size=(n, D)) for _ in range(m)],
                     ids=[f"s{i}" for i in range(m)])


class TestIngestCurves:
    def test_minimal_round_trip_bit_equal(self, tmp_path):
        data = _tiny_data(m=1, n=5, D=1)
        path = tmp_path / "one.csv"
        cli._write_dataset_csv(data, path)
        back = ingest_curves(path)
        assert back.m == 1 and back.ids == ["s0"]
        assert np.array_equal(back.Y[0], data.Y[0])

    def test_multi_dim_round_trip_and_order(self, tmp_path):
        data = _tiny_data(rng=1, m=4, n=7, D=3)
        path = tmp_path / "d3.csv"
        cli._write_dataset_csv(data, path)
        back = ingest_curves(path)
        assert back.ids == data.ids
        for a, b in zip(back.Y, data.Y):
            assert np.array_equal(a, b)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,t,y\n1,1,0.5\n")
        with pytest.raises(CliError, match="expected columns"):
            ingest_curves(path)

    def test_ragged_dims_names_id(self, tmp_path):
        rows = ["id,dim,t,y"]
        rows += [f"a,1,{t},0.1" for t in (1, 2, 3)]
        rows += [f"a,2,{t},0.2" for t in (1, 2)]
        path = tmp_path / "ragged.csv"
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(CliError, match="id 'a' has ragged lengths"):
            ingest_curves(path)

    def test_noncontiguous_t_names_lines(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("id,dim,t,y\nb,1,1,0.0\nb,1,3,0.0\n")
        with pytest.raises(CliError, match="t must be contiguous"):
            ingest_curves(path)

    def test_dim_gap_rejected(self, tmp_path):
        path = tmp_path / "dimgap.csv"
        path.write_text("id,dim,t,y\nc,1,1,0.0\nc,3,1,0.0\n")
        with pytest.raises(CliError, match="dim values must cover"):
            ingest_curves(path)


class TestIngestCovariates:
    def _curves(self, tmp_path):
        data = _tiny_data(m=3, n=6, D=1)
        path = tmp_path / "c.csv"
        cli._write_dataset_csv(data, path)
        return ingest_curves(path)

    def test_round_trip_with_type_row(self, tmp_path):
        data = self._curves(tmp_path)
        cont = np.array([[0.5], [1.5], [2.5]])
        cat = np.array([[0], [1], [1]])
        path = tmp_path / "cov.csv"
        cli._write_covariates_csv(cont, cat, data.ids, path)
        out = ingest_covariates(path, data)
        assert np.array_equal(out.cov_cont, cont)
        assert np.array_equal(out.cov_cat, cat)

    def test_rows_reordered_to_curve_ids(self, tmp_path):
        data = self._curves(tmp_path)
        path = tmp_path / "cov.csv"
        path.write_text("id,x1\ntype,cont\ns2,2.0\ns0,0.0\ns1,1.0\n")
        out = ingest_covariates(path, data)
        assert np.array_equal(out.cov_cont[:, 0], [0.0, 1.0, 2.0])

    def test_missing_type_row(self, tmp_path):
        data = self._curves(tmp_path)
        path = tmp_path / "cov.csv"
        path.write_text("id,x1\ns0,0.0\ns1,1.0\ns2,2.0\n")
        with pytest.raises(CliError, match="`type` row"):
            ingest_covariates(path, data)

    def test_unknown_id_names_line(self, tmp_path):
        data = self._curves(tmp_path)
        path = tmp_path / "cov.csv"
        path.write_text("id,x1\ntype,cont\ns0,0.0\nzz,1.0\ns2,2.0\n")
        with pytest.raises(CliError, match="line 4: unknown id 'zz'"):
            ingest_covariates(path, data)

    def test_missing_id_reported(self, tmp_path):
        data = self._curves(tmp_path)
        path = tmp_path / "cov.csv"
        path.write_text("id,x1\ntype,cont\ns0,0.0\ns1,1.0\n")
        with pytest.raises(CliError, match="no covariate row for ids"):
            ingest_covariates(path, data)

    def test_bad_kind_rejected(self, tmp_path):
        data = self._curves(tmp_path)
        path = tmp_path / "cov.csv"
        path.write_text("id,x1\ntype,continuous\ns0,0\ns1,1\ns2,2\n")
        with pytest.raises(CliError, match="cont or cat"):
            ingest_covariates(path, data)


class TestReadTruth:
    def test_reorders_and_codes(self, tmp_path):
        data = _tiny_data(m=3)
        path = tmp_path / "truth.csv"
        path.write_text("id,cluster\ns2,B\ns0,A\ns1,B\n")
        codes = read_truth(path, data)
        assert np.array_equal(codes, [0, 1, 1])

    def test_missing_id(self, tmp_path):
        data = _tiny_data(m=3)
        path = tmp_path / "truth.csv"
        path.write_text("id,cluster\ns0,A\ns1,B\n")
        with pytest.raises(CliError, match="no cluster for ids"):
            read_truth(path, data)


class TestSimulateCommand:
    def test_artifacts_and_lossless_ingest(self, tmp_path):
        out = tmp_path / "sim"
        assert cli.main(["simulate", "--out", str(out), "--seed", "5",
                         "--replicates", "2"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["replicates"] == 2
        # same spawned stream regenerates the same dataset: file is lossless
        ss = np.random.SeedSequence(5).spawn(2)[1]
        data, truth = generate_dataset(rng=np.random.default_rng(ss))
        back = ingest_curves(out / "rep02" / "curves.csv")
        assert back.m == 40
        for a, b in zip(back.Y, data.Y):
            assert np.array_equal(a, b)
        tr = pd.read_csv(out / "rep02" / "truth.csv")
        assert np.array_equal(tr["cluster"].to_numpy(), truth.z)
        cov = ingest_covariates(out / "rep02" / "covariates.csv", back)
        assert cov.cov_cont.shape == (40, 1)
        assert np.array_equal(cov.cov_cat[:, 0], truth.z)

    def test_covariates_off(self, tmp_path):
        out = tmp_path / "sim"
        assert cli.main(["simulate", "--out", str(out), "--seed", "1",
                         "--covariates", "off"]) == 0
        assert not (out / "rep01" / "covariates.csv").exists()


def _write_fit_inputs(tmp_path, *, m=6, n=9, D=2, seed=0):
    rng = np.random.default_rng(seed)
    half = m // 2
    curves = []
    for i in range(m):
        shift = 0.0 if i < half else 3.0
        curves.append(shift + rng.normal(size=(n, D)))
    data = CurveData(curves, ids=[f"s{i}" for i in range(m)])
    cli._write_dataset_csv(data, tmp_path / "curves.csv")
    cont = np.where(np.arange(m) < half, 0.0, 1.0)[:, None] + \
        0.1 * rng.standard_normal((m, 1))
    cat = (np.arange(m) >= half).astype(int)[:, None]
    cli._write_covariates_csv(cont, cat, data.ids, tmp_path / "covariates.csv")
    truth_rows = ["id,cluster"] + [
        f"s{i},{0 if i < half else 1}" for i in range(m)]
    (tmp_path / "truth.csv").write_text("\n".join(truth_rows) + "\n")


_FIT_CFG = """\
data = {base}/curves.csv
covariate_data = {base}/covariates.csv
truth = {base}/truth.csv
mode = {mode}
covariates = {covariates}
seed = 4
chains = {chains}
n_burn = 8
n_keep = 5
thin = 1
n_coef = 4
n_components = 3
error_df = 4
{extra}
"""


def _cfg_file(tmp_path, name="run.cfg", mode="mfrmmx", covariates="off",
              chains=1, extra=""):
    path = tmp_path / name
    path.write_text(_FIT_CFG.format(base=tmp_path, mode=mode,
                                    covariates=covariates, chains=chains,
                                    extra=extra))
    return path


class TestFitCommand:
    def test_dry_run_writes_only_manifest(self, tmp_path):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path)
        out = tmp_path / "dry"
        assert cli.main(["fit", "--config", str(cfg), "--out", str(out),
                         "--dry-run"]) == 0
        assert sorted(os.listdir(out)) == ["manifest.json"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "dry-run"
        assert manifest["config"]["n_burn"] == 8
        assert manifest["config_hash"]

    def test_full_fit_artifacts_and_summary(self, tmp_path):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path)
        out = tmp_path / "fit"
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        want = {"chain01/draws_z.csv", "chain01/loglik.csv",
                "chain01/theta_trace.csv", "coclustering.csv",
                "summary.json", "distance_series.csv"}
        assert want == set(manifest["artifacts"])
        z = pd.read_csv(out / "chain01" / "draws_z.csv")
        assert z.shape == (5, 7)  # draw column + 6 individuals
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_kept_total"] == 5
        assert 0.0 <= summary["rand_vs_truth"] <= 1.0
        assert summary["waic"] is not None and summary["lpml"] is not None
        C = pd.read_csv(out / "coclustering.csv")
        assert C.shape == (6, 7)

    def test_rerun_is_bit_identical(self, tmp_path):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out1)]) == 0
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out2)]) == 0
        for rel in ("manifest.json", "summary.json", "coclustering.csv",
                    "distance_series.csv", "chain01/draws_z.csv",
                    "chain01/loglik.csv", "chain01/theta_trace.csv"):
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_explicit_zero_repulsion_matches_default(self, tmp_path):
        _write_fit_inputs(tmp_path)
        cfg_a = _cfg_file(tmp_path, name="a.cfg")
        cfg_b = _cfg_file(tmp_path, name="b.cfg", extra="repulsion = 0\n")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["fit", "--config", str(cfg_a), "--out",
                         str(out_a)]) == 0
        assert cli.main(["fit", "--config", str(cfg_b), "--out",
                         str(out_b)]) == 0
        assert (out_a / "chain01" / "draws_z.csv").read_bytes() == \
            (out_b / "chain01" / "draws_z.csv").read_bytes()

    def test_covariate_fit_and_ppmx_mode(self, tmp_path):
        _write_fit_inputs(tmp_path)
        for mode in ("mfrmmx", "mfppmx-ind"):
            cfg = _cfg_file(tmp_path, name=f"{mode}.cfg", mode=mode,
                            covariates="on")
            out = tmp_path / f"cov-{mode}"
            assert cli.main(["fit", "--config", str(cfg), "--out",
                             str(out)]) == 0
            summary = json.loads((out / "summary.json").read_text())
            assert summary["covariates"] is True

    def test_covariates_on_without_file_is_config_error(self, tmp_path):
        _write_fit_inputs(tmp_path)
        path = tmp_path / "bad.cfg"
        path.write_text(f"data = {tmp_path}/curves.csv\nn_coef = 4\n"
                        "covariates = on\nn_burn = 2\nn_keep = 1\n")
        assert cli.main(["fit", "--config", str(path), "--out",
                         str(tmp_path / "o")]) == 1

    def test_cli_flag_overrides_config(self, tmp_path):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path)
        out1 = tmp_path / "s4"
        out2 = tmp_path / "s9"
        assert cli.main(["fit", "--config", str(cfg), "--out", str(out1),
                         "--seed", "9"]) == 0
        assert cli.main(["fit", "--config", str(cfg), "--out", str(out2),
                         "--seed", "9"]) == 0
        m1 = json.loads((out1 / "manifest.json").read_text())
        assert m1["seed"] == 9
        assert (out1 / "chain01" / "draws_z.csv").read_bytes() == \
            (out2 / "chain01" / "draws_z.csv").read_bytes()

    def test_sampler_failure_flagged_in_manifest(self, tmp_path, monkeypatch):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path)

        def boom(*args, **kwargs):
            raise SamplerError("iteration 3, step 'theta': boom")

        monkeypatch.setattr(cli, "run_chain", boom)
        out = tmp_path / "fail"
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out)]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert "step 'theta'" in manifest["error"]

    def test_parallel_workers_match_sequential(self, tmp_path, monkeypatch):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path, chains=2)
        out_seq = tmp_path / "seq"
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out_seq)]) == 0
        monkeypatch.setenv("CURVEMIX_WORKERS", "2")
        out_par = tmp_path / "par"
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out_par)]) == 0
        for rel in ("chain01/draws_z.csv", "chain02/draws_z.csv",
                    "summary.json"):
            assert (out_seq / rel).read_bytes() == \
                (out_par / rel).read_bytes(), rel


class TestSummarizeCommand:
    def test_recomputes_aggregates(self, tmp_path):
        _write_fit_inputs(tmp_path)
        cfg = _cfg_file(tmp_path)
        out = tmp_path / "fit"
        assert cli.main(["fit", "--config", str(cfg), "--out",
                         str(out)]) == 0
        original_cocl = (out / "coclustering.csv").read_bytes()
        original_dist = pd.read_csv(out / "distance_series.csv")
        for name in ("coclustering.csv", "summary.json",
                     "distance_series.csv"):
            (out / name).unlink()
        assert cli.main(["summarize", "--out", str(out), "--truth",
                         str(tmp_path / "truth.csv")]) == 0
        assert (out / "coclustering.csv").read_bytes() == original_cocl
        redone = pd.read_csv(out / "distance_series.csv")
        a = original_dist["mean_distance"].to_numpy()
        b = redone["mean_distance"].to_numpy()
        both = ~(np.isnan(a) | np.isnan(b))
        assert np.array_equal(np.isnan(a), np.isnan(b))
        assert np.allclose(a[both], b[both], atol=1e-10)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["rand_vs_truth"] is not None

    def test_requires_completed_fit(self, tmp_path):
        assert cli.main(["summarize", "--out", str(tmp_path)]) == 1
