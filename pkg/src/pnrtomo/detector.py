"""Analytic model of the four-SPAD beam-splitter-tree detector.

A pulse carrying ``m`` photons is routed photon by photon onto four
branches; branch ``g`` receiving ``k`` photons stays silent with probability
``(1 - eta_g)**k * (1 - p_dark_g)``. The detector reports the number of
branches that clicked, so its POVM is diagonal in the Fock basis with
coefficients ``Xi[n, m]``.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ParameterError
from .probes import poisson_pmf

BRANCHES = ("a", "b", "c", "d")
N_OUTCOMES = len(BRANCHES) + 1

CALIBRATED_EFFICIENCY = (0.1270, 0.1375, 0.1410, 0.1270)
CALIBRATED_DARK = (1.20e-4, 1.25e-4, 1.13e-4, 2.52e-4)
EQUAL_SPLIT = (0.25, 0.25, 0.25, 0.25)

#: the 16 click patterns as boolean tuples, ordered by bitmask
PATTERNS = tuple(tuple(bool(mask >> b & 1) for b in range(4)) for mask in range(16))


def _four_probabilities(name, values):
    values = tuple(float(v) for v in values)
    if len(values) != 4:
        raise ParameterError(f"{name} needs 4 entries, got {len(values)}")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"{name} entries must lie in [0, 1], got {v}")
    return values


@dataclass(frozen=True)
class DetectorParams:
    """Per-branch efficiency, dark-click probability per gate and routing split."""

    eta: Sequence[float] = CALIBRATED_EFFICIENCY
    p_dark: Sequence[float] = CALIBRATED_DARK
    split: Sequence[float] = field(default=EQUAL_SPLIT)

    def __post_init__(self):
        object.__setattr__(self, "eta", _four_probabilities("eta", self.eta))
        object.__setattr__(self, "p_dark", _four_probabilities("p_dark", self.p_dark))
        split = _four_probabilities("split", self.split)
        if abs(math.fsum(split) - 1.0) > 1e-12:
            raise ParameterError(f"split must sum to 1, got {math.fsum(split)!r}")
        object.__setattr__(self, "split", split)

    @classmethod
    def calibrated(cls):
        return cls()

    @classmethod
    def ideal(cls, split=EQUAL_SPLIT):
        return cls(eta=(1.0,) * 4, p_dark=(0.0,) * 4, split=split)

    def to_dict(self):
        return {"eta": list(self.eta), "p_dark": list(self.p_dark), "split": list(self.split)}


def branch_index(branch) -> int:
    if isinstance(branch, str) and branch.lower() in BRANCHES:
        return BRANCHES.index(branch.lower())
    if isinstance(branch, (int, np.integer)) and not isinstance(branch, bool) and 0 <= branch < 4:
        return int(branch)
    raise ParameterError(f"invalid branch id {branch!r}; expected one of {BRANCHES} or 0..3")


def _check_count(k):
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 0:
        raise ParameterError(f"photon count must be a nonnegative integer, got {k!r}")
    return int(k)


def noclick_prob(params: DetectorParams, branch, k: int) -> float:
    g = branch_index(branch)
    k = _check_count(k)
    return (1.0 - params.eta[g]) ** k * (1.0 - params.p_dark[g])


def click_prob(params: DetectorParams, branch, k: int) -> float:
    return 1.0 - noclick_prob(params, branch, k)


def noclick_table(params: DetectorParams, k_max: int) -> np.ndarray:
    """``table[g, k]`` = no-click probability of branch g with k photons."""
    return np.array(
        [[noclick_prob(params, g, k) for k in range(k_max + 1)] for g in range(4)]
    )


def _routing_weights(params, m):
    """Rows ``w[g, k] = Poisson(k; m * split_g)``.

    The product of the four rows over a composition (k_a..k_d) of m equals the
    multinomial routing probability times Poisson(m; m), so dividing the
    composition sum by Poisson(m; m) recovers the exact functional.
    """
    return np.vstack([poisson_pmf(m * s, m) for s in params.split])


def _pattern_sums(params, m, noclick):
    weights = _routing_weights(params, m)
    norm = poisson_pmf(float(m), m)[-1]
    no = noclick[:, : m + 1]
    yes = 1.0 - no
    sums = np.empty(16)
    for mask, pattern in enumerate(PATTERNS):
        x = np.where(np.array(pattern)[:, None], yes, no)
        y = np.ascontiguousarray(weights * x)
        sums[mask] = _kernels.composition_sum(y, m) / norm
    return sums


def _clicked_mask(clicked: Iterable) -> int:
    mask = 0
    for b in clicked:
        mask |= 1 << branch_index(b)
    return mask


def pattern_prob(params: DetectorParams, clicked: Iterable, m: int) -> float:
    """Probability that exactly the branches in ``clicked`` fire when m photons arrive."""
    m = _check_count(m)
    mask = _clicked_mask(clicked)
    pattern = PATTERNS[mask]
    noclick = noclick_table(params, m)
    x = np.where(np.array(pattern)[:, None], 1.0 - noclick, noclick)
    y = np.ascontiguousarray(_routing_weights(params, m) * x)
    return _kernels.composition_sum(y, m) / poisson_pmf(float(m), m)[-1]


@dataclass(frozen=True)
class PovmMatrix:
    """Diagonal POVM coefficients ``values[n, m]`` for outcomes n and Fock inputs m."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 1:
            raise ParameterError(f"POVM values must be (outcomes, M+1), got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def truncation(self) -> int:
        return self.values.shape[1] - 1

    @property
    def n_outcomes(self) -> int:
        return self.values.shape[0]

    def column_sums(self) -> np.ndarray:
        return self.values.sum(axis=0)

    def check(self, tol=1e-9):
        """Raise ParameterError unless entries lie in [0, 1] and columns sum to 1."""
        v = self.values
        if v.min() < -tol or v.max() > 1 + tol:
            raise ParameterError("POVM entries outside [0, 1]")
        err = np.abs(self.column_sums() - 1.0).max()
        if err > tol:
            raise ParameterError(f"POVM columns not normalized (max error {err:.3g})")
        return self


def theoretical_povm(params: DetectorParams, truncation: int) -> PovmMatrix:
    """Exact POVM of the tree for m = 0..truncation."""
    truncation = _check_count(truncation)
    noclick = noclick_table(params, truncation)
    sizes = np.array([sum(p) for p in PATTERNS])
    xi = np.zeros((N_OUTCOMES, truncation + 1))
    for m in range(truncation + 1):
        sums = _pattern_sums(params, m, noclick)
        for mask in range(16):
            xi[sizes[mask], m] += sums[mask]
    return PovmMatrix(xi)


def pattern_prob_closed_form(params: DetectorParams, clicked: Iterable, m: int) -> float:
    """Inclusion-exclusion form of :func:`pattern_prob`, used for cross-checks.

    Silence on a set S of branches has probability
    ``prod_{g in S}(1 - p_g) * (sum_g split_g * (1 - eta_g [g in S]))**m``.
    """
    m = _check_count(m)
    fired = [b for b in range(4) if _clicked_mask(clicked) >> b & 1]
    quiet = [b for b in range(4) if b not in fired]
    total = 0.0
    for r in range(len(fired) + 1):
        for extra in itertools.combinations(fired, r):
            silent = set(quiet) | set(extra)
            dark = math.prod(1.0 - params.p_dark[g] for g in silent)
            survive = math.fsum(
                params.split[g] * ((1.0 - params.eta[g]) if g in silent else 1.0) for g in range(4)
            )
            total += (-1) ** r * dark * survive**m
    return total
