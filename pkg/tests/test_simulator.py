import math

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from pnrtomo.detector import DetectorParams, theoretical_povm
from pnrtomo.errors import ParameterError
from pnrtomo.probes import CoherentProbe, build_probe_matrix, choose_truncation
from pnrtomo.simulator import (
    OutcomeStats,
    SimulationConfig,
    expected_smart_fraction,
    run_experiment,
    simulate_pulse,
    throughput_report,
)

CALIBRATED = DetectorParams.calibrated()
NO_DARK = DetectorParams(p_dark=(0.0,) * 4)


def analytic_response(params, mean):
    m_max = choose_truncation([mean], 1e-12)
    povm = theoretical_povm(params, m_max)
    return povm.values @ build_probe_matrix([mean], m_max).coeffs[:, 0]


def within_sigma(counts, expected, k=4.0):
    n = counts.sum()
    se = np.sqrt(expected * (1 - expected) / n)
    return np.all(np.abs(counts / n - expected) <= k * se + 1e-12)


class TestSimulatePulse:
    def test_vacuum_without_dark_counts(self):
        rng = np.random.default_rng(0)
        assert all(simulate_pulse(NO_DARK, 0.0, rng) == 0 for _ in range(1000))

    def test_bright_ideal_saturates(self):
        rng = np.random.default_rng(1)
        hits = sum(simulate_pulse(DetectorParams.ideal(), 100.0, rng) == 4 for _ in range(10_000))
        assert hits / 10_000 >= 0.99

    def test_matches_analytic_response(self):
        rng = np.random.default_rng(2)
        n = 1_000_000
        outcomes = np.fromiter((simulate_pulse(CALIBRATED, 10.0, rng) for _ in range(n)), dtype=np.int64, count=n)
        assert within_sigma(np.bincount(outcomes, minlength=5), analytic_response(CALIBRATED, 10.0))


class TestRunExperiment:
    def test_bulk_sampler_matches_analytic_response(self, kernel_backend):
        stats = run_experiment(CALIBRATED, [10.0], SimulationConfig(gating="ideal", pulses_per_probe=1_000_000, seed=5))
        assert within_sigma(stats.counts[:, 0], analytic_response(CALIBRATED, 10.0))

    def test_policies_coincide_without_dead_time(self, kernel_backend):
        runs = [
            run_experiment(CALIBRATED, [3.0, 20.0], SimulationConfig(gating=g, dead_time=0, pulses_per_probe=20_000, seed=9))
            for g in ("smart", "naive", "ideal")
        ]
        for r in runs[1:]:
            assert np.array_equal(r.counts, runs[0].counts)
            assert np.array_equal(r.offered_pulses, runs[0].offered_pulses)

    def test_smart_gating_is_unbiased(self, kernel_backend):
        smart = run_experiment(CALIBRATED, [10.0], SimulationConfig(gating="smart", dead_time=10, pulses_per_probe=100_000, seed=11))
        ideal = run_experiment(CALIBRATED, [10.0], SimulationConfig(gating="ideal", pulses_per_probe=100_000, seed=12))
        table = np.vstack([smart.counts[:, 0], ideal.counts[:, 0]])
        table = table[:, table.sum(axis=0) > 0]
        assert chi2_contingency(table)[1] > 1e-3
        assert smart.gated_pulses[0] == 100_000
        assert smart.offered_pulses[0] > 100_000

    def test_naive_gating_loses_clicks(self, kernel_backend):
        n = 1_000_000
        naive = run_experiment(CALIBRATED, [10.0], SimulationConfig(gating="naive", dead_time=10, pulses_per_probe=n, seed=13))
        ideal = run_experiment(CALIBRATED, [10.0], SimulationConfig(gating="ideal", pulses_per_probe=n, seed=14))
        p_naive = naive.frequencies[0, 0]
        p_ideal = ideal.frequencies[0, 0]
        sigma = math.sqrt(p_naive * (1 - p_naive) / n + p_ideal * (1 - p_ideal) / n)
        assert p_naive - p_ideal > 4 * sigma

    @pytest.mark.parametrize("dead_time,mean", [(5, 5.0), (20, 40.0)])
    def test_naive_bias_over_range(self, dead_time, mean):
        n = 200_000
        naive = run_experiment(CALIBRATED, [mean], SimulationConfig(gating="naive", dead_time=dead_time, pulses_per_probe=n, seed=1))
        ideal = run_experiment(CALIBRATED, [mean], SimulationConfig(gating="ideal", pulses_per_probe=n, seed=2))
        assert naive.frequencies[0, 0] > ideal.frequencies[0, 0]

    def test_column_stochastic(self):
        stats = run_experiment(CALIBRATED, [0.5, 5.0, 46.8], SimulationConfig(pulses_per_probe=5_000, seed=3))
        assert np.array_equal(stats.counts.sum(axis=0), stats.gated_pulses)
        assert np.allclose(stats.frequencies.sum(axis=0), 1.0, atol=1e-15)

    def test_single_pulse_vacuum(self):
        stats = run_experiment(NO_DARK, [0.0], SimulationConfig(pulses_per_probe=1))
        assert stats.counts[:, 0].tolist() == [1, 0, 0, 0, 0]

    def test_reproducible(self):
        cfg = SimulationConfig(pulses_per_probe=30_000, seed=77)
        a = run_experiment(CALIBRATED, [1.0, 10.0], cfg)
        b = run_experiment(CALIBRATED, [1.0, 10.0], cfg)
        assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(a.offered_pulses, b.offered_pulses)

    def test_worker_count_does_not_change_result(self):
        base = dict(pulses_per_probe=40_001, seed=8, shards=4, gating="naive")
        one = run_experiment(CALIBRATED, [2.0, 30.0], SimulationConfig(workers=1, **base))
        four = run_experiment(CALIBRATED, [2.0, 30.0], SimulationConfig(workers=4, **base))
        assert np.array_equal(one.counts, four.counts)
        assert one.gated_pulses.tolist() == [40_001, 40_001]

    def test_per_probe_pulse_counts(self):
        stats = run_experiment(CALIBRATED, [CoherentProbe(1.0, pulses=10), CoherentProbe(2.0)], SimulationConfig(pulses_per_probe=25))
        assert stats.gated_pulses.tolist() == [10, 25]


class TestThroughput:
    def test_no_dead_time(self):
        cfg = SimulationConfig(dead_time=0, pulses_per_probe=10_000)
        stats = run_experiment(CALIBRATED, [40.0], cfg)
        assert throughput_report(cfg, stats)["accepted_fraction"].tolist() == [1.0]

    def test_ideal_policy(self):
        cfg = SimulationConfig(gating="ideal", pulses_per_probe=10_000)
        stats = run_experiment(CALIBRATED, [40.0], cfg)
        assert throughput_report(cfg, stats)["accepted_fraction"].tolist() == [1.0]

    def test_smart_fraction_decreases_with_brightness(self):
        cfg = SimulationConfig(gating="smart", dead_time=10, pulses_per_probe=50_000, seed=4)
        stats = run_experiment(CALIBRATED, [1.0, 10.0, 40.0], cfg)
        frac = throughput_report(cfg, stats)["accepted_fraction"]
        assert np.all((frac > 0) & (frac < 1))
        assert frac[0] > frac[1] > frac[2]
        # renewal argument: each gate costs 1 + dead_time * P(any click) pulses on average
        for f, mean in zip(frac, (1.0, 10.0, 40.0)):
            expected = expected_smart_fraction(CALIBRATED, mean, 10)
            p_click = (1 / expected - 1) / 10
            n = 50_000
            rel_sigma = 10 * math.sqrt(n * p_click * (1 - p_click)) / (n * (1 + 10 * p_click))
            assert f == pytest.approx(expected, rel=4 * rel_sigma)

    def test_acquisition_time_uses_rep_rate(self):
        cfg = SimulationConfig(gating="ideal", pulses_per_probe=90_000)
        stats = run_experiment(CALIBRATED, [1.0], cfg)
        assert throughput_report(cfg, stats)["acquisition_time_s"][0] == pytest.approx(1.0)


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [{"rep_rate": 0}, {"dead_time": -1}, {"dead_time": 1.5}, {"gating": "lazy"}, {"pulses_per_probe": 0}, {"shards": 0}],
    )
    def test_config(self, kwargs):
        with pytest.raises(ParameterError):
            SimulationConfig(**kwargs)

    def test_stats_shape(self):
        with pytest.raises(ParameterError):
            OutcomeStats(counts=np.ones((5, 2)), means=[1.0])
        with pytest.raises(ParameterError):
            OutcomeStats(counts=np.zeros((5, 1)), means=[1.0])
