import csv
import dataclasses
import math

import numpy as np
import pytest

from epcbal import cli
from epcbal.experiment import (
    ALPHA_HEADER,
    SUMMARY_HEADER,
    TRIALS_HEADER,
    ExperimentConfig,
    aggregate,
    load_config,
    parse_config_text,
    read_summary,
    read_trials,
    run_experiment,
    trial_stream,
    write_outputs,
)
from epcbal.simulator import TrialConfig, run_trial


TRIAL_FIELDS = {f.name for f in dataclasses.fields(TrialConfig)}


def small(**kw):
    trial = dict(n_sus=2, alpha=0.7, n_flops=30, seed=5)
    trial.update({k: kw.pop(k) for k in list(kw) if k in TRIAL_FIELDS})
    return ExperimentConfig(TrialConfig(**trial), **({"n_trials": 4} | kw))


@pytest.fixture(scope="module")
def result():
    return run_experiment(small())


class TestConfig:
    def test_mapping_roundtrip(self):
        cfg = small(methods=("ep", "mcmc-oracle"))
        assert ExperimentConfig.from_mapping(cfg.to_mapping()) == cfg

    def test_text_roundtrip(self, tmp_path):
        cfg = small()
        path = tmp_path / "c.txt"
        path.write_text("\n".join(f"{k}={v}" for k, v in cfg.to_mapping().items()) + "\n")
        assert load_config(path) == cfg

    def test_parse_comments(self):
        vals = parse_config_text("# header\n\nn_sus = 3  # three\nalpha=0.9\n")
        assert vals == {"n_sus": "3", "alpha": "0.9"}

    @pytest.mark.parametrize("text", ["n_sus", "=3"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            parse_config_text(text)

    def test_overrides(self):
        cfg = small().with_overrides(n_sus=4, methods="ep,mcmc-oracle", alpha=None)
        assert cfg.trial.n_sus == 4 and cfg.trial.alpha == 0.7
        assert cfg.methods == ("ep", "mcmc-oracle")

    @pytest.mark.parametrize("vals", [{"bogus": "1"}, {"n_sus": "x"}, {"methods": "svm"},
                                      {"n_trials": "0"}, {"methods": "ep,ep"}])
    def test_invalid(self, vals):
        with pytest.raises(ValueError):
            ExperimentConfig.from_mapping(vals)

    def test_max_power_none(self):
        assert ExperimentConfig.from_mapping({"max_power": "none"}).trial.max_power is None
        assert ExperimentConfig.from_mapping({"max_power": "2.5"}).trial.max_power == 2.5

    def test_hash_ignores_execution_settings(self):
        a, b = small(), small(out_dir="elsewhere", workers=3)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != small(n_sus=3).config_hash()


class TestSeeding:
    def test_trial_seed(self):
        cfg = small()
        assert [cfg.trial_config("ep", i).seed for i in range(3)] == [5, 6, 7]

    def test_streams_are_counter_based(self):
        a = trial_stream(5, 3).uniform(size=4)
        b = trial_stream(8, 0).uniform(size=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, trial_stream(5, 4).uniform(size=4))

    def test_adding_trials_keeps_earlier(self, result):
        more = run_experiment(small(n_trials=6))
        for a, b in zip(result.records["ep"], more.records["ep"][:4]):
            assert a.z == b.z and a.error == b.error

    def test_methods_share_topologies(self):
        res = run_experiment(small(n_trials=2, n_flops=3, methods=("ep", "mcmc-oracle"),
                                   n_samples=500))
        for a, b in zip(res.records["ep"], res.records["mcmc-oracle"]):
            np.testing.assert_array_equal(a.topology.h_star, b.topology.h_star)

    def test_workers_do_not_change_results(self, result):
        par = run_experiment(small(workers=2))
        for m in result.methods:
            np.testing.assert_array_equal(par.curves[m], result.curves[m])


class TestAggregate:
    def test_single_trial_identity(self):
        cfg = small(n_trials=1)
        res = run_experiment(cfg)
        rec = run_trial(cfg.trial_config("ep", 0), trial_stream(cfg.seed, 0))
        np.testing.assert_array_equal(res.curves["ep"], rec.error)
        assert res.alpha_sim["ep"] == rec.alpha_sim

    def test_curve_length_and_range(self, result):
        assert result.curves["ep"].shape == (30,)
        assert 0.0 <= result.alpha_sim["ep"] <= 1.0
        assert result.complete and result.n_aborted["ep"] == 0

    def test_independent_reduction(self, result, tmp_path):
        write_outputs(result, tmp_path)
        rows = read_trials(tmp_path / "trials.csv")
        curves = np.array([rows[("ep", i)]["error"] for i in range(4)])
        # Second pass: plain sums over the CSV, not the in-memory records.
        total = np.zeros(30)
        for c in curves:
            total += c
        np.testing.assert_allclose(result.curves["ep"], total / 4, rtol=1e-11)
        acks = [np.mean(rows[("ep", i)]["z"] == 1) for i in range(4)]
        assert result.alpha_sim["ep"] == pytest.approx(sum(acks) / 4, rel=1e-12)

    def test_aborted_excluded_and_flagged(self):
        # A short horizon forces unattainable targets after the opening ACK
        # run; without the fallback target those trials abort.
        res = run_experiment(small(n_sus=3, n_flops=20, seed=7, alpha_fallback=None))
        assert res.n_aborted["ep"] > 0.05 * res.config.n_trials
        assert not res.complete
        done = [r for r in res.records["ep"] if not r.aborted]
        assert res.n_completed["ep"] == len(done)

    def test_partial_abort_means(self):
        cfg = small(n_trials=3)
        res = run_experiment(cfg)
        recs = list(res.records["ep"])
        recs[1] = dataclasses.replace(recs[1], aborted=True)
        agg = aggregate(cfg, {"ep": recs})
        np.testing.assert_allclose(agg.curves["ep"], np.mean([recs[0].error, recs[2].error], 0))
        assert agg.n_aborted["ep"] == 1 and not agg.complete


class TestOutputs:
    def test_headers_and_counts(self, result, tmp_path):
        paths = write_outputs(result, tmp_path)
        with open(paths["trials.csv"]) as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TRIALS_HEADER
        assert len(rows) - 1 == 4 * 30 * 1
        lines = paths["summary.csv"].read_text().splitlines()
        assert tuple(lines[0].split(",")) == SUMMARY_HEADER
        assert tuple(lines[31].split(",")) == ALPHA_HEADER
        assert len(lines) == 1 + 30 + 1 + 1

    def test_summary_roundtrip(self, result, tmp_path):
        write_outputs(result, tmp_path)
        curves, alpha = read_summary(tmp_path / "summary.csv")
        for m in result.methods:
            assert [float(f"{v:.12g}") for v in result.curves[m]] == curves[m].tolist()
            np.testing.assert_allclose(curves[m], result.curves[m], rtol=1e-11)
            assert alpha[m] == float(f"{result.alpha_sim[m]:.12g}")

    def test_deterministic_bytes(self, tmp_path):
        a = write_outputs(run_experiment(small()), tmp_path / "a")
        b = write_outputs(run_experiment(small()), tmp_path / "b")
        for name in a:
            assert a[name].read_bytes() == b[name].read_bytes()

    def test_config_echo(self, result, tmp_path):
        write_outputs(result, tmp_path)
        vals = parse_config_text((tmp_path / "config.txt").read_text())
        assert vals["config_hash"] == result.config_hash
        assert vals["complete"] == "true" and vals["aborted.ep"] == "0"
        rebuilt = ExperimentConfig.from_mapping(
            {k: v for k, v in vals.items() if k in result.config.to_mapping()})
        assert rebuilt.config_hash() == result.config_hash

    def test_first_flop_error_bound(self, result):
        box = result.config.trial.prior_box()
        for rec in result.records["ep"]:
            est = np.maximum(rec.estimates[0], 0.0)
            # ||h - h*|| <= ||h|| + ||h*|| and ||h|| <= ||hi|| for a point of
            # the box, so the first error is at most 1 + ||hi|| / ||h*||.
            assert box.contains(est)
            bound = 1.0 + np.linalg.norm(box.hi) / np.linalg.norm(rec.topology.h_star)
            assert rec.error[0] <= bound

    def test_unwritable(self, result, tmp_path):
        target = tmp_path / "file"
        target.write_text("")
        with pytest.raises(OSError, match="file"):
            write_outputs(result, target / "sub")


class TestCli:
    def test_run(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["--sus", "2", "--alpha", "0.7", "--flops", "15", "--trials", "2",
                       "--seed", "1", "--method", "ep", "--out", str(out)])
        assert rc == cli.EXIT_OK
        assert {p.name for p in out.iterdir()} == {"trials.csv", "summary.csv", "config.txt"}
        assert "alpha_sim" in capsys.readouterr().out

    def test_config_file_with_override(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("n_sus=2\nn_flops=10\nn_trials=1\nalpha=0.9\n")
        out = tmp_path / "o"
        assert cli.main(["--config", str(conf), "--alpha", "0.6", "--out", str(out), "-q"]) == 0
        vals = parse_config_text((out / "config.txt").read_text())
        assert vals["alpha"] == "0.6" and vals["n_flops"] == "10"

    def test_invalid_value(self, tmp_path):
        assert cli.main(["--alpha", "0.3", "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert cli.main(["--config", str(tmp_path / "nope.conf")]) == cli.EXIT_IO

    def test_io_failure(self, tmp_path):
        blocker = tmp_path / "f"
        blocker.write_text("")
        rc = cli.main(["--sus", "1", "--flops", "2", "--trials", "1", "--out",
                       str(blocker / "x"), "-q"])
        assert rc == cli.EXIT_IO

    def test_incomplete(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("alpha_fallback=none\n")
        rc = cli.main(["--config", str(conf), "--sus", "3", "--alpha", "0.7", "--flops", "20",
                       "--trials", "4", "--seed", "7", "--out", str(tmp_path), "-q"])
        assert rc == cli.EXIT_INCOMPLETE
        assert "complete=false" in (tmp_path / "config.txt").read_text()

    def test_module_entry_point(self, tmp_path):
        import subprocess
        import sys
        out = subprocess.run([sys.executable, "-m", "epcbal", "--help"], capture_output=True,
                             text=True, check=True)
        assert "--sus" in out.stdout and "--method" in out.stdout


def test_nan_when_everything_aborts():
    res = run_experiment(small(n_sus=1, n_flops=2, n_trials=1))
    if res.n_aborted["ep"] == 1:
        assert math.isnan(res.alpha_sim["ep"])
