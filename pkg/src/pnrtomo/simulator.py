"""Monte Carlo pulse-train simulation of the detector with SPAD dead time.

Gating policies:

``ideal``  no dead time at all.
``smart``  a laser pulse is gated only when all four SPADs are ready;
           pulses arriving during hold-off are skipped.
``naive``  every pulse is gated; a SPAD still in hold-off cannot click.

Click patterns are drawn in bulk for an all-ready detector; the dead-time
bookkeeping is a sequential scan done by the compiled kernel.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .detector import N_OUTCOMES, DetectorParams, noclick_table
from .errors import ParameterError
from .probes import CoherentProbe, _as_probes

GATING_POLICIES = ("smart", "naive", "ideal")
DEFAULT_REP_RATE = 9.0e4
_CHUNK = 1 << 17


@dataclass(frozen=True)
class SimulationConfig:
    rep_rate: float = DEFAULT_REP_RATE
    dead_time: int = 10
    gating: str = "smart"
    seed: int = 0
    pulses_per_probe: int = 100_000
    shards: int = 1
    workers: int = 1

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ParameterError(f"rep_rate must be > 0, got {self.rep_rate}")
        if int(self.dead_time) != self.dead_time or self.dead_time < 0:
            raise ParameterError(f"dead_time must be an integer >= 0, got {self.dead_time}")
        if self.gating not in GATING_POLICIES:
            raise ParameterError(f"gating must be one of {GATING_POLICIES}, got {self.gating!r}")
        if self.pulses_per_probe < 1:
            raise ParameterError("pulses_per_probe must be >= 1")
        if self.shards < 1 or self.workers < 1:
            raise ParameterError("shards and workers must be >= 1")
        if self.seed < 0:
            raise ParameterError("seed must be >= 0")


@dataclass(frozen=True)
class OutcomeStats:
    """Outcome counts ``counts[n, j]`` per probe j plus gate bookkeeping."""

    counts: np.ndarray
    means: np.ndarray
    offered_pulses: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        means = np.asarray(self.means, dtype=float)
        if counts.ndim != 2 or counts.shape[1] != means.size:
            raise ParameterError(
                f"counts shape {counts.shape} inconsistent with {means.size} probes"
            )
        if (counts < 0).any():
            raise ParameterError("counts must be nonnegative")
        if (counts.sum(axis=0) < 1).any():
            raise ParameterError("every probe needs at least one gated pulse")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "means", means)
        if self.offered_pulses is None:
            object.__setattr__(self, "offered_pulses", counts.sum(axis=0))
        else:
            object.__setattr__(self, "offered_pulses", np.asarray(self.offered_pulses, dtype=np.int64))

    @property
    def gated_pulses(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.gated_pulses

    @property
    def n_probes(self) -> int:
        return self.means.size


def simulate_pulse(params: DetectorParams, mean_photons: float, rng: np.random.Generator) -> int:
    """One gated pulse on an all-ready detector; returns the number of clicking branches.

    Photons are routed one at a time onto the branches.
    """
    m = int(rng.poisson(mean_photons))
    draws = rng.random(m + 4).tolist()
    a, ab, abc = params.split[0], params.split[0] + params.split[1], 1.0 - params.split[3]
    routed = [0, 0, 0, 0]
    for u in draws[:m]:
        routed[0 if u < a else 1 if u < ab else 2 if u < abc else 3] += 1
    outcome = 0
    for g in range(4):
        silent = (1.0 - params.eta[g]) ** routed[g] * (1.0 - params.p_dark[g])
        outcome += draws[m + g] >= silent
    return outcome


def sample_ready_clicks(params: DetectorParams, mean_photons: float, n: int, rng) -> np.ndarray:
    """Click patterns (n, 4) for n gated pulses with every SPAD ready."""
    out = np.empty((n, 4), dtype=np.uint8)
    split = np.array(params.split)
    for start in range(0, n, _CHUNK):
        size = min(_CHUNK, n - start)
        photons = rng.poisson(mean_photons, size)
        routed = rng.multinomial(photons, split)
        u = rng.random((size, 4))
        silent = noclick_table(params, int(routed.max(initial=0)))
        for g in range(4):
            out[start : start + size, g] = u[:, g] >= silent[g, routed[:, g]]
    return out


def _shard_sizes(total, shards):
    base, extra = divmod(total, shards)
    return [base + (1 if s < extra else 0) for s in range(shards)]


def _run_shard(params, mean, n, sim, probe_index, shard_index):
    rng = np.random.default_rng(np.random.SeedSequence(sim.seed, spawn_key=(probe_index, shard_index)))
    clicks = sample_ready_clicks(params, mean, n, rng)
    if sim.gating == "ideal" or sim.dead_time == 0:
        outcomes, offered = clicks.sum(axis=1, dtype=np.int64), n
    else:
        outcomes, offered = _kernels.dead_time_scan(clicks, sim.dead_time, sim.gating == "smart")
    return np.bincount(outcomes, minlength=N_OUTCOMES), int(offered)


def run_experiment(params: DetectorParams, probes: Sequence, sim: SimulationConfig) -> OutcomeStats:
    """Acquire ``pulses`` gated detections per probe (``sim.pulses_per_probe`` by default)."""
    probes = _as_probes(probes)
    tasks = []
    for j, probe in enumerate(probes):
        total = probe.pulses or sim.pulses_per_probe
        for s, n in enumerate(_shard_sizes(total, sim.shards)):
            if n:
                tasks.append((j, s, probe.mean_photons, n))

    def work(task):
        j, s, mean, n = task
        return _run_shard(params, mean, n, sim, j, s)

    if sim.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=sim.workers) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    counts = np.zeros((N_OUTCOMES, len(probes)), dtype=np.int64)
    offered = np.zeros(len(probes), dtype=np.int64)
    for (j, _, _, _), (c, o) in zip(tasks, results):
        counts[:, j] += c
        offered[j] += o
    return OutcomeStats(
        counts=counts,
        means=np.array([p.mean_photons for p in probes]),
        offered_pulses=offered,
    )


def throughput_report(sim: SimulationConfig, stats: OutcomeStats) -> dict:
    """Accepted-gate fraction per probe and the implied acquisition time."""
    fraction = stats.gated_pulses / stats.offered_pulses
    return {
        "accepted_fraction": fraction,
        "acquisition_time_s": stats.offered_pulses / sim.rep_rate,
        "overall_fraction": float(stats.gated_pulses.sum() / stats.offered_pulses.sum()),
    }


def expected_smart_fraction(params: DetectorParams, mean_photons: float, dead_time: int) -> float:
    """Long-run accepted fraction under smart gating: 1 / (1 + dead_time * P(any click))."""
    silent = math.prod(
        (1.0 - params.p_dark[g]) * math.exp(-mean_photons * params.split[g] * params.eta[g])
        for g in range(4)
    )
    return 1.0 / (1.0 + dead_time * (1.0 - silent))
