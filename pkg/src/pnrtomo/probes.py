"""Coherent probe ensembles and the Poisson design matrix."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError

LADDER_PROBES = 18
LADDER_MIN_MEAN = 0.5
LADDER_MAX_MEAN = 46.8
DEFAULT_TAIL_EPSILON = 1e-6


@dataclass(frozen=True)
class CoherentProbe:
    """A coherent state |alpha> characterised by its mean photon number |alpha|^2."""

    mean_photons: float
    pulses: Optional[int] = None

    def __post_init__(self):
        if not (self.mean_photons >= 0 and math.isfinite(self.mean_photons)):
            raise ParameterError(f"mean_photons must be finite and >= 0, got {self.mean_photons}")
        if self.pulses is not None and self.pulses < 1:
            raise ParameterError(f"pulses must be >= 1, got {self.pulses}")


@dataclass(frozen=True)
class ProbeMatrix:
    """Poisson coefficients ``coeffs[m, j]`` for m = 0..M and probes j."""

    coeffs: np.ndarray
    means: np.ndarray

    @property
    def truncation(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def n_probes(self) -> int:
        return self.coeffs.shape[1]


_LOG_FACTORIAL = np.zeros(1)


def log_factorial(n_max: int) -> np.ndarray:
    """Table of log(k!) for k = 0..n_max (grown and cached on demand)."""
    global _LOG_FACTORIAL
    if n_max >= _LOG_FACTORIAL.size:
        size = max(n_max + 1, 2 * _LOG_FACTORIAL.size)
        table = np.array([math.lgamma(k + 1.0) for k in range(size)])
        table.setflags(write=False)
        _LOG_FACTORIAL = table
    return _LOG_FACTORIAL[: n_max + 1]


def poisson_pmf(mean_photons: float, m_max: int) -> np.ndarray:
    """Poisson probabilities for m = 0..m_max, evaluated in the log domain."""
    if mean_photons < 0 or m_max < 0:
        raise ParameterError("mean_photons and m_max must be nonnegative")
    if mean_photons == 0:
        out = np.zeros(m_max + 1)
        out[0] = 1.0
        return out
    m = np.arange(m_max + 1)
    return np.exp(m * math.log(mean_photons) - mean_photons - log_factorial(m_max))


def poisson_coeff(mean_photons: float, m: int) -> float:
    """Probability of exactly ``m`` photons in a coherent pulse of mean ``mean_photons``."""
    if mean_photons < 0 or m < 0:
        raise ParameterError("mean_photons and m must be nonnegative")
    return float(poisson_pmf(mean_photons, int(m))[-1])


def upper_tail(mean_photons: float, m: int) -> float:
    """P(X >= m) for X ~ Poisson(mean_photons), summed directly over the tail."""
    if m <= 0:
        return 1.0
    if mean_photons == 0:
        return 0.0
    k_max = int(m + mean_photons + 40.0 * math.sqrt(mean_photons) + 60)
    pmf = poisson_pmf(mean_photons, k_max)
    return float(np.sum(pmf[m:][::-1]))


def _as_probes(probes) -> list:
    out = [p if isinstance(p, CoherentProbe) else CoherentProbe(float(p)) for p in probes]
    if not out:
        raise ParameterError("probe list is empty")
    return out


def build_probe_matrix(probes: Sequence, truncation: int) -> ProbeMatrix:
    probes = _as_probes(probes)
    if truncation < 0:
        raise ParameterError(f"truncation must be >= 0, got {truncation}")
    coeffs = np.column_stack([poisson_pmf(p.mean_photons, truncation) for p in probes])
    means = np.array([p.mean_photons for p in probes], dtype=float)
    return ProbeMatrix(coeffs=coeffs, means=means)


def choose_truncation(probes: Sequence, tail_epsilon: float = DEFAULT_TAIL_EPSILON) -> int:
    """Smallest M such that the brightest probe has P(X >= M) < tail_epsilon."""
    probes = _as_probes(probes)
    if not 0 < tail_epsilon < 1:
        raise ParameterError(f"tail_epsilon must lie in (0, 1), got {tail_epsilon}")
    brightest = max(p.mean_photons for p in probes)
    if brightest == 0:
        return 1
    k_max = int(brightest + 40.0 * math.sqrt(brightest) + 60)
    pmf = poisson_pmf(brightest, k_max)
    # tails[M] = P(X >= M); reverse cumsum adds the smallest terms first
    tails = np.cumsum(pmf[::-1])[::-1]
    below = np.flatnonzero(tails < tail_epsilon)
    return int(below[0]) if below.size else k_max + 1


def geometric_ladder(count: int, lowest: float, highest: float) -> list:
    if count < 1 or lowest <= 0 or highest < lowest:
        raise ParameterError("geometric ladder needs count >= 1 and 0 < lowest <= highest")
    return [CoherentProbe(float(v)) for v in np.geomspace(lowest, highest, count)]


def amplitude_ladder(count: int, lowest: float, highest: float) -> list:
    """Means evenly spaced in |alpha| rather than |alpha|^2.

    Poisson widths are constant in amplitude, so every Fock number up to the
    brightest probe sees roughly the same number of significant columns.
    """
    if count < 1 or lowest < 0 or highest < lowest:
        raise ParameterError("amplitude ladder needs count >= 1 and 0 <= lowest <= highest")
    amps = np.linspace(math.sqrt(lowest), math.sqrt(highest), count)
    return [CoherentProbe(float(a * a)) for a in amps]


def default_ladder() -> list:
    """Eighteen means spaced geometrically over 0.5..46.8 photons per pulse."""
    return geometric_ladder(LADDER_PROBES, LADDER_MIN_MEAN, LADDER_MAX_MEAN)


def parse_probe_spec(spec: str) -> list:
    """Parse ``geometric:J,min,max``, ``amplitude:J,min,max``, ``linear:J,min,max`` or ``list:m1,...``."""
    kind, _, body = spec.partition(":")
    kind = kind.strip().lower()
    try:
        values = [float(v) for v in body.split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad probe spec {spec!r}: {exc}") from None
    if kind in ("geometric", "amplitude", "linear"):
        if len(values) != 3 or values[0] != int(values[0]):
            raise ParameterError(f"probe spec {spec!r} must look like {kind}:J,min,max")
        count, lo, hi = int(values[0]), values[1], values[2]
        if kind == "geometric":
            return geometric_ladder(count, lo, hi)
        if kind == "amplitude":
            return amplitude_ladder(count, lo, hi)
        if count < 1 or lo < 0 or hi < lo:
            raise ParameterError(f"bad linear ladder {spec!r}")
        return [CoherentProbe(float(v)) for v in np.linspace(lo, hi, count)]
    if kind == "list":
        return _as_probes(values)
    raise ParameterError(f"unknown probe spec kind {kind!r}")
