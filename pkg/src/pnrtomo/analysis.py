"""Reconstruction quality metrics: per-probe fidelity and Husimi Q-functions."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .detector import PovmMatrix
from .errors import ParameterError
from .probes import poisson_pmf, upper_tail

Q_TAIL_TOLERANCE = 1e-6
DEFAULT_EXTENT = 8.0
DEFAULT_POINTS = 161


class TruncationWarning(UserWarning):
    """Poisson weight beyond the POVM truncation is not negligible."""


@dataclass(frozen=True)
class FidelityReport:
    fidelities: np.ndarray
    means: np.ndarray

    @property
    def min_fidelity(self) -> float:
        return float(self.fidelities.min())

    def to_dict(self) -> dict:
        return {
            "min_fidelity": self.min_fidelity,
            "probes": [
                {"j": j, "mean_photons": float(mu), "F": float(f)}
                for j, (mu, f) in enumerate(zip(self.means, self.fidelities))
            ],
        }


def fidelity(xi_e, xi_r) -> float:
    """Classical overlap sum_n sqrt(p_n q_n) of two outcome distributions."""
    p = np.asarray(xi_e, dtype=float)
    q = np.asarray(xi_r, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ParameterError(f"fidelity needs two equal-length vectors, got {p.shape} and {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise ParameterError("fidelity inputs must be nonnegative")
    if p.sum() > 1 + 1e-9 or q.sum() > 1 + 1e-9:
        raise ParameterError("fidelity inputs must sum to at most 1")
    # sqrt(p*q) rather than sqrt(p)*sqrt(q): symmetric and exact for p == q
    return float(min(np.sum(np.sqrt(p * q)), 1.0))


def fidelity_report(xi_e: np.ndarray, xi_r: np.ndarray, means) -> FidelityReport:
    xi_e = np.asarray(xi_e, dtype=float)
    xi_r = np.asarray(xi_r, dtype=float)
    if xi_e.shape != xi_r.shape:
        raise ParameterError(f"measured {xi_e.shape} and predicted {xi_r.shape} responses differ in shape")
    # predictions may dip a hair below zero in floating point
    xi_r = np.clip(xi_r, 0.0, None)
    fids = np.array([fidelity(xi_e[:, j], xi_r[:, j]) for j in range(xi_e.shape[1])])
    return FidelityReport(fidelities=fids, means=np.asarray(means, dtype=float))


def q_function(povm: PovmMatrix, mean_photons: float) -> np.ndarray:
    """Q_n(alpha) = pi^-1 sum_m Xi[n, m] Poisson(m; |alpha|^2) for every outcome n."""
    if mean_photons < 0:
        raise ParameterError("mean_photons must be >= 0")
    tail = upper_tail(mean_photons, povm.truncation + 1)
    if tail > Q_TAIL_TOLERANCE:
        warnings.warn(
            f"Poisson mass {tail:.3g} beyond truncation M={povm.truncation} at |alpha|^2={mean_photons:g}",
            TruncationWarning,
            stacklevel=2,
        )
    return povm.values @ poisson_pmf(mean_photons, povm.truncation) / math.pi


@dataclass(frozen=True)
class Mesh:
    """Square Cartesian mesh over [-extent, extent]^2 in the alpha plane."""

    extent: float = DEFAULT_EXTENT
    points: int = DEFAULT_POINTS

    def axes(self):
        if self.points == 1:
            return np.zeros(1), np.zeros(1)
        ax = np.linspace(-self.extent, self.extent, self.points)
        return ax, ax


@dataclass(frozen=True)
class QGrid:
    """Q_n values on a mesh: ``values[n, iy, ix]`` at ``re[ix] + 1j * im[iy]``."""

    re: np.ndarray
    im: np.ndarray
    values: np.ndarray
    tail: np.ndarray
    overlay: Optional[np.ndarray] = None
    overlay_re: Optional[np.ndarray] = None


def q_radial(povm: PovmMatrix, radii: np.ndarray):
    """Q values (n, r) and truncated Poisson tails at each radius |alpha|."""
    radii = np.asarray(radii, dtype=float)
    weights = np.column_stack([poisson_pmf(r * r, povm.truncation) for r in radii])
    tails = np.array([upper_tail(r * r, povm.truncation + 1) for r in radii])
    return povm.values @ weights / math.pi, tails


def q_grid(povm: PovmMatrix, mesh: Mesh = Mesh(), stats=None) -> QGrid:
    """Q surfaces for every outcome, evaluated once per distinct radius.

    With ``stats`` the measured points pi^-1 xi_nj are attached at phase zero,
    i.e. at alpha_j = sqrt(mean_j).
    """
    re, im = mesh.axes()
    radius = np.hypot(re[None, :], im[:, None])
    unique, inverse = np.unique(radius, return_inverse=True)
    values, tails = q_radial(povm, unique)
    if tails.max(initial=0.0) > Q_TAIL_TOLERANCE:
        warnings.warn(
            f"mesh reaches Poisson tail mass {tails.max():.3g} beyond truncation M={povm.truncation}",
            TruncationWarning,
            stacklevel=2,
        )
    shape = radius.shape
    grid = values[:, inverse.reshape(shape)]
    overlay = overlay_re = None
    if stats is not None:
        overlay = np.asarray(stats.frequencies) / math.pi
        overlay_re = np.sqrt(np.asarray(stats.means))
    return QGrid(
        re=re, im=im, values=grid, tail=tails[inverse.reshape(shape)],
        overlay=overlay, overlay_re=overlay_re,
    )
