"""Ingestion, normalization, the benchmark generator, config, and the CLI."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectradiff.cli import main
from spectradiff.config import DEFAULTS, load_config, merged
from spectradiff.dataio import (
    fit_norm,
    ingest_csv,
    make_benchmark,
    write_csv,
)
from spectradiff.errors import ConfigError, ParseError


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestIngest:
    def test_single_row_constant_bands_normalize_to_zero(self, tmp_path):
        path = write(tmp_path, "label,b1,b2,b3\noak,0.5,0.2,0.9\n")
        ds = ingest_csv(path)
        assert ds.n == 1 and ds.bands == 3
        np.testing.assert_array_equal(ds.samples, 0.0)
        assert ds.class_names == ["oak"]

    def test_minmax_endpoints(self, tmp_path):
        path = write(tmp_path, "label,b1\na,0\nb,10\n")
        ds = ingest_csv(path)
        np.testing.assert_allclose(np.sort(ds.samples[:, 0]), [-1.0, 1.0], atol=1e-15)

    def test_labels_indexed_by_first_appearance(self, tmp_path):
        path = write(tmp_path, "label,b1\nzebra,1\napple,2\nzebra,3\n")
        ds = ingest_csv(path)
        assert ds.class_names == ["zebra", "apple"]
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = rng.uniform(0.0, 1.2, size=(20, 7))
        names = [f"c{i % 3}" for i in range(20)]
        path = tmp_path / "in.csv"
        write_csv(str(path), raw, names)
        ds = ingest_csv(str(path))
        np.testing.assert_allclose(ds.norm.denormalize(ds.samples), raw, atol=1e-10)

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError, match="line 1"):
            ingest_csv(write(tmp_path, ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(ParseError, match="line 2"):
            ingest_csv(write(tmp_path, "label,b1,b2\n"))

    def test_bad_header(self, tmp_path):
        with pytest.raises(ParseError, match="line 1"):
            ingest_csv(write(tmp_path, "x,y\n1,2\n"))

    def test_ragged_row_reports_line(self, tmp_path):
        path = write(tmp_path, "label,b1,b2\na,1,2\nb,3\n")
        with pytest.raises(ParseError, match="line 3"):
            ingest_csv(path)

    def test_non_numeric_reports_line(self, tmp_path):
        path = write(tmp_path, "label,b1,b2\na,1,2\nb,3,oops\n")
        with pytest.raises(ParseError, match="line 3"):
            ingest_csv(path)

    def test_non_finite_reports_line(self, tmp_path):
        path = write(tmp_path, "label,b1\na,1\nb,nan\n")
        with pytest.raises(ParseError, match="line 3"):
            ingest_csv(path)

    @settings(max_examples=30, deadline=None)
    @given(row=st.integers(0, 5), kind=st.sampled_from(["truncate", "extra_field", "garbage"]))
    def test_corruption_fuzz(self, row, kind):
        import os
        import tempfile

        lines = ["label,b1,b2"] + [f"c{i % 2},{i}.5,{i}.25" for i in range(6)]
        target = row + 1
        if kind == "truncate":
            lines[target] = lines[target].rsplit(",", 1)[0]
        elif kind == "extra_field":
            lines[target] += ",9"
        else:
            lines[target] = lines[target].replace(".5", ".5x")
        fd, path = tempfile.mkstemp(suffix=".csv")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
            with pytest.raises(ParseError, match=f"line {target + 1}"):
                ingest_csv(path)
        finally:
            os.unlink(path)

    def test_standard_mode(self, tmp_path):
        path = write(tmp_path, "label,b1,b2\na,1,5\nb,3,5\n")
        ds = ingest_csv(path, norm_mode="standard")
        assert ds.norm.mode == "standard"
        np.testing.assert_allclose(ds.samples.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(ds.norm.denormalize(ds.samples),
                                   [[1, 5], [3, 5]], atol=1e-12)

    def test_unknown_norm_mode(self):
        with pytest.raises(ConfigError):
            fit_norm(np.ones((2, 2)), "bogus")


class TestBenchmark:
    def test_equal_seeds_identical(self):
        a = make_benchmark(3, 10, 8, seed=4)
        b = make_benchmark(3, 10, 8, seed=4)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_class_means_pairwise_distinct(self):
        ds = make_benchmark(5, 20, 16, seed=5)
        means = [ds.samples[ds.labels == c].mean(axis=0) for c in range(5)]
        for i in range(5):
            for j in range(i + 1, 5):
                assert np.linalg.norm(means[i] - means[j]) > 0.1

    def test_two_classes_linearly_separable(self):
        ds = make_benchmark(2, 30, 16, seed=6)
        a = ds.samples[ds.labels == 0]
        b = ds.samples[ds.labels == 1]
        w = a.mean(axis=0) - b.mean(axis=0)
        thresh = (a.mean(axis=0) + b.mean(axis=0)) @ w / 2
        pred = np.where(ds.samples @ w - thresh > 0, 0, 1)
        # a perfect linear probe exists
        from spectradiff.evaluate import f1_scores
        assert f1_scores(pred, ds.labels, 2).macro == 1.0

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            make_benchmark(0, 10, 4)


class TestConfigFile:
    def test_defaults_cover_documented_keys(self):
        for key in ("schedule.T", "schedule.delta", "schedule.gamma", "denoiser.hidden",
                    "train.steps", "augment.method", "eval.trials", "seed"):
            assert key in DEFAULTS

    def test_parse_and_merge(self, tmp_path):
        path = write(tmp_path, "# comment\nschedule.T = 123\ntrain.lr = 0.005\n", "cfg.txt")
        vals = load_config(path)
        assert vals == {"schedule.T": 123, "train.lr": 0.005}
        cfg = merged(vals, {"train.lr": 0.1, "seed": None})
        assert cfg["schedule.T"] == 123
        assert cfg["train.lr"] == 0.1      # flag wins
        assert cfg["seed"] == DEFAULTS["seed"]

    def test_unknown_key_rejected_with_line(self, tmp_path):
        path = write(tmp_path, "schedule.T = 10\nbogus.key = 1\n", "cfg.txt")
        with pytest.raises(ParseError, match="line 2"):
            load_config(path)

    def test_type_coercion_errors(self, tmp_path):
        path = write(tmp_path, "schedule.T = soon\n", "cfg.txt")
        with pytest.raises(ConfigError):
            load_config(path)


class TestCli:
    def test_no_arguments_usage_exit_2(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_exit_2(self):
        assert main(["frobnicate"]) == 2

    def test_schedule_dump_row_count(self, capsys):
        assert main(["schedule-dump", "--T", "10", "--delta", "1.2"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out[0] == "t,beta,alpha_bar,snr,posterior_var,loss_weight"
        assert len(out) == 11

    def test_missing_file_is_reported_not_raised(self, capsys):
        assert main(["ingest", "--in", "/nonexistent/x.csv"]) == 1
        assert "error" in capsys.readouterr().err.lower()

    def test_make_benchmark_then_ingest(self, tmp_path, capsys):
        out = str(tmp_path / "bench.csv")
        assert main(["make-benchmark", "--classes", "2", "--per-class", "8",
                     "--bands", "6", "--seed", "3", "--out", out]) == 0
        assert main(["ingest", "--in", out]) == 0
        assert "classes: 2" in capsys.readouterr().out

    def test_config_file_flows_into_subcommand(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("schedule.T = 7\n", encoding="utf-8")
        assert main(["schedule-dump", "--config", str(cfg)]) == 0
        rows = capsys.readouterr().out.strip().split("\n")
        assert len(rows) == 8

    def test_augment_cli_round_trip(self, tmp_path, capsys):
        bench = str(tmp_path / "b.csv")
        merged_path = str(tmp_path / "m.csv")
        main(["make-benchmark", "--classes", "2", "--per-class", "10", "--bands", "5",
              "--seed", "0", "--out", bench])
        assert main(["augment", "--method", "jitter", "--per-class", "4",
                     "--noise-power", "0.05", "--seed", "1",
                     "--in", bench, "--out", merged_path]) == 0
        ds = ingest_csv(merged_path)
        assert ds.n == 28

    def test_byte_identical_outputs_for_equal_seeds(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        for out in (a, b):
            assert main(["make-benchmark", "--classes", "2", "--per-class", "6",
                         "--bands", "4", "--seed", "9", "--out", out]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_full_pipeline_exits_zero(self, tmp_path, capsys):
        """make-benchmark -> train-dm -> generate -> augment -> evaluate."""
        bench = str(tmp_path / "bench.csv")
        ckpt = str(tmp_path / "dm.ckpt")
        gen = str(tmp_path / "gen.csv")
        aug = str(tmp_path / "aug.csv")
        table = str(tmp_path / "table.csv")
        assert main(["make-benchmark", "--classes", "2", "--per-class", "12",
                     "--bands", "8", "--seed", "0", "--out", bench]) == 0
        assert main(["train-dm", "--in", bench, "--out", ckpt, "--T", "10",
                     "--steps", "40", "--batch-size", "8", "--log-every", "100",
                     "--seed", "0"]) == 0
        assert main(["generate", "--checkpoint", ckpt, "--class", "0", "--count", "3",
                     "--seed", "1", "--norm-from", bench, "--out", gen]) == 0
        assert main(["augment", "--method", "diffusion", "--checkpoint", ckpt,
                     "--per-class", "2", "--seed", "2", "--in", bench, "--out", aug]) == 0
        assert main(["evaluate", "--in", bench, "--methods", "none,smote", "--seeds", "0",
                     "--per-class", "3", "--trials", "1", "--search-epochs", "1",
                     "--final-epochs", "2", "--subsample", "1.0",
                     "--out-csv", table]) == 0
        out = capsys.readouterr().out
        assert "Weighted Average" in out
        assert ingest_csv(aug).n == 28
        assert ingest_csv(gen).n == 3

    def test_train_classifier_cli(self, tmp_path, capsys):
        bench = str(tmp_path / "b.csv")
        main(["make-benchmark", "--classes", "2", "--per-class", "10", "--bands", "6",
              "--seed", "4", "--out", bench])
        assert main(["train-classifier", "--in", bench, "--lr", "0.003", "--epochs", "3",
                     "--subsample", "1.0", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "macro F1" in out

    def test_gradcheck_cli_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "all passed" in capsys.readouterr().out
