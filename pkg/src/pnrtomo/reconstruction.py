"""POVM reconstruction by smoothness-regularised, simplex-constrained least squares.

Variables are ``X[n, m]`` flattened outcome-major (``x[n * (M + 1) + m]``).
The objective is

    sum_{n,j} w_nj (sum_m a_mj X[n, m] - xi_nj)**2 + lam * sum_n ||D X[n, :]||**2

with ``D`` the first (or second) difference operator along m, subject to
``X[:, m]`` lying on the probability simplex for every m.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .detector import PovmMatrix
from .errors import ParameterError, SolverError
from .probes import ProbeMatrix

log = logging.getLogger(__name__)

REGULARIZERS = ("first", "second")
WEIGHTINGS = ("none", "inverse_variance")


@dataclass(frozen=True)
class ReconstructionConfig:
    smoothing_weight: float = 1e-2
    regularizer: str = "first"
    weighting: str = "none"
    max_iterations: int = 200_000
    kkt_tolerance: float = 1e-9
    truncation: Optional[int] = None

    def __post_init__(self):
        if not self.smoothing_weight >= 0:
            raise ParameterError("smoothing_weight must be >= 0")
        if not self.kkt_tolerance > 0:
            raise ParameterError("kkt_tolerance must be > 0")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if self.regularizer not in REGULARIZERS:
            raise ParameterError(f"regularizer must be one of {REGULARIZERS}")
        if self.weighting not in WEIGHTINGS:
            raise ParameterError(f"weighting must be one of {WEIGHTINGS}")
        if self.truncation is not None and self.truncation < 0:
            raise ParameterError("truncation must be >= 0")


@dataclass(frozen=True)
class QuadraticProgram:
    """``min 0.5 x'Hx + c'x + c0`` s.t. ``E x = 1`` and ``lower <= x <= upper``.

    ``E`` sums the outcomes of each Fock column, so the feasible set is a
    product of probability simplices.
    """

    hessian: np.ndarray
    linear: np.ndarray
    constant: float
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    shape: tuple
    design: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    data_weights: np.ndarray = field(repr=False)
    smoothing_weight: float = 0.0
    # f(x) = ||factor @ x - factor_rhs||**2, used for well-conditioned solves
    factor: Optional[np.ndarray] = field(default=None, repr=False)
    factor_rhs: Optional[np.ndarray] = field(default=None, repr=False)

    def objective(self, x):
        x = np.ravel(x)
        return float(0.5 * x @ (self.hessian @ x) + self.linear @ x + self.constant)

    def gradient(self, x):
        return self.hessian @ np.ravel(x) + self.linear


@dataclass
class ReconstructionResult:
    povm: PovmMatrix
    objective_value: float
    residuals: np.ndarray
    kkt_residual: float
    iterations: int
    polished: bool = False
    smoothing_weight: float = 0.0

    def diagnostics(self) -> dict:
        return {
            "objective_value": self.objective_value,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "polished": self.polished,
            "smoothing_weight": self.smoothing_weight,
            "residual_rms": float(np.sqrt(np.mean(self.residuals**2))),
            "truncation": self.povm.truncation,
        }


def difference_operator(size: int, order: int = 1) -> np.ndarray:
    d = np.eye(size)
    for _ in range(order):
        d = np.diff(d, axis=0)
    return d


def _frequencies_and_weights(stats, weighting):
    if hasattr(stats, "frequencies"):
        xi = np.asarray(stats.frequencies, dtype=float)
        pulses = np.asarray(stats.gated_pulses, dtype=float)
    else:
        xi = np.asarray(stats, dtype=float)
        pulses = None
    if xi.ndim != 2:
        raise ParameterError(f"outcome frequencies must be 2-D (outcomes, probes), got {xi.shape}")
    if weighting == "none":
        return xi, np.ones_like(xi)
    if pulses is None:
        raise ParameterError("inverse_variance weighting needs pulse counts")
    # binomial variance, floored at one count so empty cells keep finite weight
    p = np.maximum(xi, 1.0 / pulses)
    var = p * (1.0 - np.minimum(p, 1.0 - 1.0 / pulses)) / pulses
    w = 1.0 / var
    return xi, w / w.mean()


def build_objective(probe_matrix: ProbeMatrix, stats, config: ReconstructionConfig) -> QuadraticProgram:
    """Assemble the reconstruction QP for probe coefficients ``a[m, j]`` and observed ``xi[n, j]``."""
    a = np.asarray(probe_matrix.coeffs if isinstance(probe_matrix, ProbeMatrix) else probe_matrix, float)
    size, n_probes = a.shape
    if config.truncation is not None and config.truncation != size - 1:
        raise ParameterError(
            f"probe matrix truncation {size - 1} != configured truncation {config.truncation}"
        )
    xi, w = _frequencies_and_weights(stats, config.weighting)
    if xi.shape[1] != n_probes:
        raise ParameterError(f"stats have {xi.shape[1]} probes, probe matrix has {n_probes}")
    n_out = xi.shape[0]
    order = 1 if config.regularizer == "first" else 2
    d = difference_operator(size, order) if size > order else np.zeros((0, size))
    smooth = config.smoothing_weight * (d.T @ d)

    n_var = n_out * size
    hessian = np.zeros((n_var, n_var))
    linear = np.empty(n_var)
    rows = n_probes + d.shape[0]
    factor = np.zeros((n_out * rows, n_var))
    factor_rhs = np.zeros(n_out * rows)
    for n in range(n_out):
        block = slice(n * size, (n + 1) * size)
        hessian[block, block] = 2.0 * ((a * w[n]) @ a.T + smooth)
        linear[block] = -2.0 * (a @ (w[n] * xi[n]))
        sqrt_w = np.sqrt(w[n])
        factor[n * rows : n * rows + n_probes, block] = (a * sqrt_w).T
        factor[n * rows + n_probes : (n + 1) * rows, block] = np.sqrt(config.smoothing_weight) * d
        factor_rhs[n * rows : n * rows + n_probes] = sqrt_w * xi[n]
    hessian = 0.5 * (hessian + hessian.T)
    eq = np.tile(np.eye(size), n_out)
    return QuadraticProgram(
        hessian=hessian,
        linear=linear,
        constant=float(np.sum(w * xi**2)),
        eq_matrix=eq,
        eq_rhs=np.ones(size),
        lower=np.zeros(n_var),
        upper=np.ones(n_var),
        shape=(n_out, size),
        design=a,
        targets=xi,
        data_weights=w,
        smoothing_weight=config.smoothing_weight,
        factor=factor,
        factor_rhs=factor_rhs,
    )


def project_simplex_columns(x: np.ndarray) -> np.ndarray:
    """Euclidean projection of every column of ``x`` onto the probability simplex."""
    k = x.shape[0]
    u = -np.sort(-x, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    idx = np.arange(1, k + 1)[:, None]
    cond = u - css / idx > 0
    rho = k - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(x.shape[1])] / (rho + 1)
    return np.maximum(x - theta, 0.0)


def kkt_residual(qp: QuadraticProgram, x: np.ndarray) -> float:
    """Max-norm of ``x - P(x - grad f(x))``; zero exactly at a minimiser."""
    shape = qp.shape
    x = np.reshape(x, shape)
    step = x - np.reshape(qp.gradient(x), shape)
    return float(np.abs(x - project_simplex_columns(step)).max())


def _equality_solve(qp, idx, column, size):
    """Minimise f over the free variables ``idx`` subject to unit column sums.

    Uses a null-space least-squares solve on the objective's factor, which
    avoids squaring the condition number of the probe matrix.
    """
    n_var = qp.linear.size
    cols = column[idx]
    e = np.zeros((size, idx.size))
    e[cols, np.arange(idx.size)] = 1.0
    # particular solution: spread each column's unit mass over its free entries
    x0 = 1.0 / np.bincount(cols, minlength=size)[cols]
    q, _ = np.linalg.qr(e.T, mode="complete")
    null = q[:, size:]
    if qp.factor is not None:
        b = qp.factor[:, idx]
        rhs = qp.factor_rhs - b @ x0
        y = np.linalg.lstsq(b @ null, rhs, rcond=None)[0] if null.shape[1] else np.zeros(0)
    else:
        h = qp.hessian[np.ix_(idx, idx)]
        g = h @ x0 + qp.linear[idx]
        y = np.linalg.lstsq(null.T @ h @ null, -null.T @ g, rcond=None)[0]
    out = np.zeros(n_var)
    out[idx] = x0 + null @ y
    return out


def _multiplier_slack(qp, x, free, column, size):
    """Reduced costs ``grad_i + nu_col(i)``; negative on a fixed variable means release it."""
    grad = qp.gradient(x)
    idx = np.flatnonzero(free)
    counts = np.bincount(column[idx], minlength=size)
    nu = -np.bincount(column[idx], weights=grad[idx], minlength=size) / np.maximum(counts, 1)
    return grad + nu[column]


def _dual_active_set(qp, x, rounds=25):
    """Primal-dual active-set iteration from the support of ``x``.

    Cheap and usually exact within a few rounds, but may cycle; returns
    ``None`` in that case.
    """
    k, size = qp.shape
    column = np.tile(np.arange(size), k)
    free = np.ravel(x) > 0
    tol = 1e-12 * max(1.0, np.abs(qp.linear).max())
    for _ in range(rounds):
        cand = _equality_solve(qp, np.flatnonzero(free), column, size)
        if not np.all(np.isfinite(cand)):
            return None
        slack = _multiplier_slack(qp, cand, free, column, size)
        negative = free & (cand < 0)
        wrong_fixed = ~free & (slack < -tol)
        if not negative.any() and not wrong_fixed.any():
            return cand
        free = (free & ~negative) | wrong_fixed
        if np.bincount(column[free], minlength=size).min() == 0:
            return None
    return None


def _primal_active_set(qp, x, max_steps):
    """Feasible-descent active-set method with a ratio test.

    Each step either adds a blocking bound or releases the variable with the
    most negative reduced cost, so the objective never increases.
    """
    k, size = qp.shape
    column = np.tile(np.arange(size), k)
    x = np.ravel(x).copy()
    free = x > 0
    tol = 1e-12 * max(1.0, np.abs(qp.linear).max())
    for _ in range(max_steps):
        cand = _equality_solve(qp, np.flatnonzero(free), column, size)
        step = cand - x
        if np.abs(step).max() <= 1e-15:
            slack = _multiplier_slack(qp, x, free, column, size)
            slack[free] = np.inf
            worst = int(np.argmin(slack))
            if slack[worst] >= -tol:
                return x
            free[worst] = True
            continue
        shrinking = free & (step < 0)
        ratios = np.full(x.size, np.inf)
        ratios[shrinking] = -x[shrinking] / step[shrinking]
        block = int(np.argmin(ratios))
        if ratios[block] >= 1.0:
            x = cand
        else:
            x = x + ratios[block] * step
            x[block] = 0.0
            free[block] = False
            if np.bincount(column[free], minlength=size).min() == 0:
                return None
        x[~free] = 0.0
    return None


def _polish(qp, x, max_steps=None):
    cand = _dual_active_set(qp, x)
    if cand is None:
        cand = _primal_active_set(qp, x, max_steps or 4 * qp.linear.size)
    return cand


def solve(
    qp: QuadraticProgram,
    config: ReconstructionConfig,
    x0=None,
    polish: bool = True,
    batch: int = 200,
) -> ReconstructionResult:
    """Accelerated projected gradient with adaptive restart plus active-set polishing.

    After every ``batch`` gradient steps the support of the iterate seeds a
    primal-dual active-set solve; an exact KKT point ends the run. With
    ``polish=False`` only the gradient iteration is used.
    """
    k, size = qp.shape
    if x0 is None:
        x = np.full((k, size), 1.0 / k)
    else:
        x = project_simplex_columns(np.array(x0, dtype=float).reshape(k, size))
    lipschitz = float(np.linalg.eigvalsh(qp.hessian)[-1]) if qp.hessian.size else 1.0
    step = 1.0 / max(lipschitz, 1e-300)

    def finish(point, iterations, polished):
        point = np.reshape(point, (k, size))
        point = np.clip(point, 0.0, 1.0)
        result = ReconstructionResult(
            povm=PovmMatrix(point),
            objective_value=qp.objective(point),
            residuals=point @ qp.design - qp.targets,
            kkt_residual=kkt_residual(qp, point),
            iterations=iterations,
            polished=polished,
            smoothing_weight=qp.smoothing_weight,
        )
        log.debug("solve: %d iterations, kkt %.3g, polished=%s", iterations, result.kkt_residual, polished)
        return result

    start_obj = qp.objective(x)
    y, t, f_prev = x.copy(), 1.0, start_obj
    iterations = 0
    best, best_kkt = x.copy(), kkt_residual(qp, x)
    next_polish = 0
    while True:
        if polish and iterations >= next_polish:
            cand = _polish(qp, x)
            if cand is not None:
                if kkt_residual(qp, cand) <= config.kkt_tolerance and qp.objective(cand) <= start_obj + 1e-12:
                    return finish(cand, iterations, True)
            next_polish = max(batch, 2 * iterations)
        if best_kkt <= config.kkt_tolerance:
            return finish(best, iterations, False)
        if iterations >= config.max_iterations:
            break
        for _ in range(min(batch, config.max_iterations - iterations)):
            grad = np.reshape(qp.gradient(y), (k, size))
            x_new = project_simplex_columns(y - step * grad)
            f_new = qp.objective(x_new)
            if f_new > f_prev:
                # restart momentum when the objective goes up
                t, y = 1.0, x.copy()
                continue
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            x, t, f_prev = x_new, t_new, f_new
            iterations += 1
        res = kkt_residual(qp, x)
        if res < best_kkt:
            best, best_kkt = x.copy(), res
    raise SolverError(
        f"no KKT point within {config.kkt_tolerance:g} after {iterations} iterations "
        f"(best residual {best_kkt:.3g})",
        best=best,
        kkt_residual=best_kkt,
        iterations=iterations,
    )


def reconstruct(probe_matrix: ProbeMatrix, stats, config: ReconstructionConfig = ReconstructionConfig()) -> ReconstructionResult:
    return solve(build_objective(probe_matrix, stats, config), config)


def predicted_response(povm, probe_matrix) -> np.ndarray:
    """``xi_r[n, j] = sum_m Xi[n, m] a[m, j]``."""
    values = povm.values if isinstance(povm, PovmMatrix) else np.asarray(povm, float)
    a = probe_matrix.coeffs if isinstance(probe_matrix, ProbeMatrix) else np.asarray(probe_matrix, float)
    if values.shape[1] != a.shape[0]:
        raise ParameterError(
            f"POVM truncation {values.shape[1] - 1} does not match probe matrix truncation {a.shape[0] - 1}"
        )
    return values @ a
