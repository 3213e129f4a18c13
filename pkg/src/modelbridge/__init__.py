"""Model bridging: regress simulator-parameter posteriors on ML-model embeddings.

Kernel means of ML-model fits are mapped to kernel means of kernel-ABC
simulator posteriors, so a new dataset yields both a prediction and
herded simulator-parameter samples without running the simulator.
"""

from .kernels import (
    EmpiricalKernelMean,
    KernelSpec,
    NumericalError,
    SingularSystemError,
    gauss_kernel,
    inner_product,
    median_heuristic,
    rkhs_distance_sq,
    solve_regularized,
)
from .kernel_abc import AbcConfig, PriorBox, kernel_abc, run_calibration, sample_prior
from .herding import Grid, HerdingConfig, herd, mmd_to_target
from .dist2dist import BridgingModel, fit, kappa
from .gp import GPModel, fit_gp
from .simulators import (
    AnalyticToySimulator,
    AssemblyLineSimulator,
    Dataset,
    RegimeShiftConfig,
    generate_dataset,
    simulate_assembly,
)
from .pipeline import ExperimentConfig, bridge_predict, pre_learn, train_bridge

__version__ = "0.1.0"
