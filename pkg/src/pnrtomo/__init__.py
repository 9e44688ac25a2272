"""Tomography of a four-SPAD beam-splitter-tree photon-number-resolving detector.

Analytic POVM model, coherent-probe design matrices, a dead-time-aware Monte
Carlo simulator, constrained least-squares POVM reconstruction and the
fidelity / Husimi-Q validation metrics.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .analysis import FidelityReport, Mesh, QGrid, fidelity, fidelity_report, q_function, q_grid
from .detector import (
    DetectorParams,
    PovmMatrix,
    click_prob,
    noclick_prob,
    pattern_prob,
    theoretical_povm,
)
from .errors import ConfigError, ParameterError, SchemaError, SolverError
from .probes import (
    CoherentProbe,
    ProbeMatrix,
    build_probe_matrix,
    choose_truncation,
    default_ladder,
    poisson_coeff,
)
from .reconstruction import (
    ReconstructionConfig,
    ReconstructionResult,
    build_objective,
    predicted_response,
    reconstruct,
    solve,
)
from .simulator import OutcomeStats, SimulationConfig, run_experiment, simulate_pulse, throughput_report
