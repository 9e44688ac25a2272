import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnrtomo import cli, formats
from pnrtomo.config import load, resolve
from pnrtomo.detector import DetectorParams, PovmMatrix, theoretical_povm
from pnrtomo.errors import ConfigError, SchemaError
from pnrtomo.probes import build_probe_matrix, geometric_ladder
from pnrtomo.reconstruction import predicted_response
from pnrtomo.simulator import OutcomeStats

SMALL = ["--probes", "geometric:6,0.5,20", "--simulation.pulses_per_probe", "20000"]


def run(*args):
    return cli.main([str(a) for a in args])


def rows(path):
    return [r for _, r in formats._csv_rows(path)][1:]


def noiseless_stats(params, means, total=10**15):
    """Counts proportional to the exact model response, rounded at the 1e-15 level."""
    pm = build_probe_matrix(means, 120)
    xi = predicted_response(theoretical_povm(params, 120), pm)
    counts = np.rint(xi * total).astype(np.int64)
    return OutcomeStats(counts=counts, means=np.asarray(means, dtype=float))


class TestTheory:
    def test_default_rows_sum_to_one(self, tmp_path):
        assert run("theory", "--out", tmp_path) == 0
        data = rows(tmp_path / cli.THEORY_CSV)
        assert len(data) == 61
        for r in data:
            assert abs(sum(float(v) for v in r[1:]) - 1) < 1e-9

    def test_ideal_small(self, tmp_path):
        cfg = tmp_path / "ideal.yaml"
        cfg.write_text("detector:\n  eta: [1, 1, 1, 1]\n  p_dark: [0, 0, 0, 0]\ntheory:\n  truncation: 4\n")
        assert run("theory", "--config", cfg, "--out", tmp_path) == 0
        data = rows(tmp_path / cli.THEORY_CSV)
        assert len(data) == 5
        assert [float(v) for v in data[1][1:]] == [0, 1, 0, 0, 0]

    def test_zero_truncation(self, tmp_path):
        assert run("theory", "--out", tmp_path, "--theory.truncation", 0) == 0
        data = rows(tmp_path / cli.THEORY_CSV)
        assert len(data) == 1
        assert float(data[0][1]) == pytest.approx(0.999390, abs=5e-7)

    def test_round_trip_exact(self, tmp_path):
        assert run("theory", "--out", tmp_path) == 0
        back = formats.read_povm_csv(tmp_path / cli.THEORY_CSV)
        np.testing.assert_array_equal(back.values, theoretical_povm(DetectorParams.calibrated(), 60).values)

    def test_provenance_header(self, tmp_path):
        assert run("theory", "--out", tmp_path) == 0
        first = (tmp_path / cli.THEORY_CSV).read_text().splitlines()[0]
        assert first.startswith("# pnrtomo ")
        assert "config_sha256=" + resolve().digest in first


class TestSimulate:
    def test_single_pulse_dark_free_vacuum(self, tmp_path):
        args = ["--probes", "list:0", "--detector.p_dark", "[0,0,0,0]", "--simulation.pulses_per_probe", 1]
        assert run("simulate", "--out", tmp_path, *args) == 0
        stats = formats.read_stats(tmp_path / cli.STATS_CSV)
        assert stats.counts[:, 0].tolist() == [1, 0, 0, 0, 0]

    def test_fixed_seed_byte_identical(self, tmp_path):
        names = (cli.STATS_CSV, cli.STATS_JSON)
        assert run("simulate", "--out", tmp_path, "--seed", 11, *SMALL) == 0
        first = [(tmp_path / n).read_bytes() for n in names]
        assert run("simulate", "--out", tmp_path, "--seed", 11, *SMALL) == 0
        assert [(tmp_path / n).read_bytes() for n in names] == first

    def test_seed_changes_output(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "a", "--seed", 1, *SMALL) == 0
        assert run("simulate", "--out", tmp_path / "b", "--seed", 2, *SMALL) == 0
        assert (tmp_path / "a" / cli.STATS_CSV).read_bytes() != (tmp_path / "b" / cli.STATS_CSV).read_bytes()

    @pytest.mark.slow
    def test_default_frequencies_within_4_sigma(self, tmp_path):
        assert run("simulate", "--out", tmp_path) == 0
        stats = formats.read_stats(tmp_path / cli.STATS_CSV)
        cfg = resolve()
        pm = build_probe_matrix([p.mean_photons for p in cfg.probes], 130)
        xi = predicted_response(theoretical_povm(cfg.detector, 130), pm)
        n = stats.gated_pulses
        se = np.sqrt(xi * (1 - xi) / n)
        z = np.abs(stats.frequencies - xi) / np.maximum(se, 1e-300)
        # cells with zero expected probability must have zero counts
        assert np.all(stats.counts[xi * n < 1e-12] == 0)
        assert z[xi * n >= 1e-12].max() < 4.0

    def test_json_echo(self, tmp_path):
        assert run("simulate", "--out", tmp_path, "--seed", 5, "--gating", "naive", *SMALL) == 0
        doc = json.loads((tmp_path / cli.STATS_JSON).read_text())
        assert doc["seed"] == 5
        assert doc["config"]["simulation"]["gating"] == "naive"
        assert len(doc["probes"]) == 6
        from_json = formats.read_stats(tmp_path / cli.STATS_JSON)
        from_csv = formats.read_stats(tmp_path / cli.STATS_CSV)
        np.testing.assert_array_equal(from_json.counts, from_csv.counts)
        np.testing.assert_array_equal(from_json.means, from_csv.means)


class TestReconstruct:
    def test_noiseless_recovery(self, tmp_path):
        # Poisson-moment inversion is exponentially ill-conditioned in m, so even
        # 1e-15-accurate data pin down only the photon numbers the probes cover.
        # "Covered" here: m <= 2 * brightest mean.
        params = DetectorParams.calibrated()
        means = [p.mean_photons for p in geometric_ladder(20, 0.05, 3.0)]
        stats_path = formats.write_stats_csv(tmp_path / "exact.csv", noiseless_stats(params, means))
        code = run(
            "reconstruct", "--out", tmp_path, "--stats", stats_path,
            "--smoothing", 0, "--truncation-eps", "1e-12",
        )
        assert code == 0
        povm = formats.read_povm_csv(tmp_path / cli.POVM_CSV)
        truth = theoretical_povm(params, povm.truncation)
        assert np.abs(povm.values[:, :7] - truth.values[:, :7]).max() < 1e-4
        doc = json.loads((tmp_path / cli.RECON_JSON).read_text())
        assert doc["fidelity"]["min_fidelity"] > 1 - 1e-9

    def test_empty_stats_file(self, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert run("reconstruct", "--out", tmp_path, "--stats", empty) == cli.EXIT_DATA
        assert "empty" in capsys.readouterr().err

    def test_malformed_row_named(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("j,mean_photons,gated_pulses,c0,c1,c2,c3,c4\n0,1.0,10,5,5,0,0,0\n1,2.0,10,5,x,0,0,0\n")
        assert run("reconstruct", "--out", tmp_path, "--stats", bad) == cli.EXIT_DATA
        assert "bad.csv:3" in capsys.readouterr().err

    def test_missing_stats_is_io_error(self, tmp_path):
        assert run("reconstruct", "--out", tmp_path, "--stats", tmp_path / "nope.csv") == cli.EXIT_IO

    def test_solver_non_convergence(self, tmp_path, capsys):
        assert run("simulate", "--out", tmp_path, *SMALL) == 0
        code = run(
            "reconstruct", "--out", tmp_path, *SMALL,
            "--reconstruction.max_iterations", 1, "--reconstruction.kkt_tolerance", "1e-300",
        )
        assert code == cli.EXIT_SOLVER
        assert "converge" in capsys.readouterr().err

    def test_calibrated_run_fidelities(self, tmp_path):
        assert run("simulate", "--out", tmp_path) == 0
        assert run("reconstruct", "--out", tmp_path) == 0
        doc = json.loads((tmp_path / cli.RECON_JSON).read_text())
        assert len(doc["fidelity"]["probes"]) == 18
        assert doc["fidelity"]["min_fidelity"] > 0.9995


class TestAnalyze:
    def test_same_source_noiseless(self, tmp_path):
        params = DetectorParams.calibrated()
        means = [0.5, 2.0, 10.0, 30.0]
        stats = noiseless_stats(params, means)
        stats_path = formats.write_stats_csv(tmp_path / "s.csv", stats)
        povm_path = formats.write_povm_csv(tmp_path / "p.csv", theoretical_povm(params, 120))
        assert run("analyze", "--out", tmp_path, "--povm", povm_path, "--stats", stats_path) == 0
        doc = json.loads((tmp_path / cli.FIDELITY_JSON).read_text())
        for entry in doc["probes"]:
            assert abs(entry["F"] - 1) < 1e-9
        re, im, q = formats.read_qgrid_csv(tmp_path / cli.QGRID_CSV)
        assert q.shape == (5, 161 * 161)
        overlay = rows(tmp_path / cli.OVERLAY_CSV)
        assert len(overlay) == 4
        assert float(overlay[2][1]) == pytest.approx(np.sqrt(10.0), abs=1e-15)

    def test_missing_povm(self, tmp_path):
        assert run("analyze", "--out", tmp_path, "--povm", tmp_path / "missing.csv") == cli.EXIT_IO

    def test_dimension_mismatch(self, tmp_path, capsys):
        povm = tmp_path / "p.csv"
        povm.write_text("m,xi0,xi1,xi2,xi3\n0,1,0,0,0\n")
        stats = formats.write_stats_csv(tmp_path / "s.csv", noiseless_stats(DetectorParams.calibrated(), [1.0], 1000))
        assert run("analyze", "--out", tmp_path, "--povm", povm, "--stats", stats) == cli.EXIT_DATA
        assert "header" in capsys.readouterr().err

    def test_outcome_count_mismatch_in_memory(self, tmp_path):
        # a well-formed POVM file paired with stats of another width
        povm = formats.write_povm_csv(tmp_path / "p.csv", theoretical_povm(DetectorParams.calibrated(), 10))
        stats = tmp_path / "s.json"
        stats.write_text(json.dumps({"probes": [
            {"j": 0, "mean_photons": 1.0, "gated_pulses": 4, "counts": [1, 1, 1, 1]}
        ]}))
        assert run("analyze", "--out", tmp_path, "--povm", povm, "--stats", stats) == cli.EXIT_DATA

    def test_default_pipeline_min_fidelity(self, tmp_path):
        assert run("pipeline", "--out", tmp_path) == 0
        doc = json.loads((tmp_path / cli.FIDELITY_JSON).read_text())
        assert doc["min_fidelity"] > 0.9995
        assert doc["truncation"] == 84


class TestConfig:
    def test_dotted_override(self, tmp_path):
        cfg = cli._config_from_args(
            cli.build_parser().parse_known_args(["simulate", "--simulation.dead_time", "5"])[0],
            ["--simulation.dead_time", "5", "--reconstruction.regularizer=second"],
        )
        assert cfg.simulation.dead_time == 5
        assert cfg.reconstruction.regularizer == "second"

    def test_flags_map_to_fields(self):
        args, extra = cli.build_parser().parse_known_args(
            ["pipeline", "--seed", "3", "--smoothing", "0.5", "--truncation-eps", "1e-8", "--gating", "ideal"]
        )
        cfg = cli._config_from_args(args, extra)
        assert cfg.simulation.seed == 3
        assert cfg.reconstruction.smoothing_weight == 0.5
        assert cfg.tail_epsilon == 1e-8
        assert cfg.simulation.gating == "ideal"

    def test_yaml_error_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("simulation:\n  seed: 1\n  dead_time: [1, 2\n")
        assert run("theory", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
        assert "line" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "override",
        [
            ["--simulation.gating", "sometimes"],
            ["--detector.eta", "[0.1, 0.2]"],
            ["--nosuch.field", "1"],
            ["--simulation.pulses_per_probe", "2.5"],
            ["--probes", "geometric:0,1,2"],
        ],
    )
    def test_bad_values_exit_2(self, tmp_path, override, capsys):
        assert run("theory", "--out", tmp_path, *override) == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_unknown_field_in_file(self, tmp_path):
        bad = tmp_path / "c.yaml"
        bad.write_text("reconstruction:\n  smoothness: 1\n")
        with pytest.raises(ConfigError, match="reconstruction.smoothness"):
            load(bad)

    def test_digest_ignores_output_dir(self):
        assert resolve(overrides={"output.dir": "a"}).digest == resolve(overrides={"output.dir": "b"}).digest
        assert resolve(overrides={"simulation.seed": "1"}).digest != resolve().digest

    def test_defaults_round_trip(self, tmp_path, capsys):
        assert cli.main(["defaults"]) == 0
        path = tmp_path / "d.yaml"
        path.write_text(capsys.readouterr().out)
        assert load(path).digest == resolve().digest


class TestFormats:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 30), st.integers(0, 2**32 - 1))
    def test_povm_round_trip(self, tmp_path_factory, m_max, seed):
        rng = np.random.default_rng(seed)
        vals = rng.dirichlet(np.ones(5), size=m_max + 1).T
        path = formats.write_povm_csv(tmp_path_factory.mktemp("r") / "p.csv", PovmMatrix(vals))
        np.testing.assert_array_equal(formats.read_povm_csv(path).values, vals)

    def test_povm_bad_m_sequence(self, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("m,xi0,xi1,xi2,xi3,xi4\n0,1,0,0,0,0\n2,0,1,0,0,0\n")
        with pytest.raises(SchemaError, match="p.csv:3"):
            formats.read_povm_csv(p)

    def test_stats_count_mismatch(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("j,mean_photons,gated_pulses,c0,c1,c2,c3,c4\n0,1.0,11,5,5,0,0,0\n")
        with pytest.raises(SchemaError, match="s.csv:2"):
            formats.read_stats(p)

    def test_stats_json_missing_probes(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{}")
        with pytest.raises(SchemaError, match="probes"):
            formats.read_stats(p)

    def test_float_precision(self):
        x = 0.1 + 0.2
        assert float(formats.fmt(x)) == x


@pytest.mark.slow
def test_backends_byte_identical(tmp_path):
    """The compiled and pure-Python kernels emit identical artifacts."""
    from pnrtomo import BACKEND

    if BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    outs = {}
    for pure in ("0", "1"):
        env = dict(os.environ, PNRTOMO_PURE_PYTHON=pure)
        args = [sys.executable, "-m", "pnrtomo.cli", "pipeline", "--out", str(tmp_path), *SMALL]
        subprocess.run(args, check=True, env=env)
        outs[pure] = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert len(outs["0"]) == 8
    for name, blob in outs["0"].items():
        assert outs["1"][name] == blob, name
