"""Stabilization of linear evolution systems by Stratonovich noise feedback.

Pipeline: build a model, split its spectrum into unstable and stable parts,
synthesize rank-N multiplicative noise feedback acting on a subdomain,
simulate the closed loop and certify almost-sure exponential decay
empirically.
"""

from .certify import (
    DecayCertificate,
    MeanSquareDecay,
    baseline_growth,
    certify_decay,
    fit_decay_rate,
    mean_square_decay,
    seeds_agree,
)
from .cli import ExperimentReport, run_pipeline
from .config import ExperimentConfig, load_config
from .errors import (
    BlowUpError,
    ConfigError,
    MatrixFormatError,
    ModelError,
    NumericalError,
    SingularGramError,
    SpectralError,
    StratstabError,
    TuningError,
    ValidationError,
)
from .matrixio import matrix_roundtrip, read_matrix, write_matrix
from .model import (
    AdvectionDiffusionSpec,
    OperatorModel,
    build_advection_diffusion,
    build_from_matrix,
    inner,
    norm,
    subdomain_mask,
)
from .sde import (
    LyapunovEstimate,
    LyapunovParams,
    SdeSystem,
    SimulationParams,
    Trajectory,
    estimate_lyapunov,
    integrate,
    integrate_ensemble,
    ito_correction,
    simulate_closed_loop,
    simulate_wong_zakai,
    wong_zakai,
)
from .spectral import (
    LyapunovWeight,
    SpectralData,
    UnstableDecomposition,
    biorthonormalize,
    check_semisimple,
    eigendecompose,
    project,
    select_unstable_index,
    solve_lyapunov,
    unstable_count,
)
from .synthesis import (
    ActuatorSet,
    FeedbackLaw,
    NoiseDesign,
    RealBasis,
    build_actuators,
    build_feedback,
    build_real_basis,
    build_real_feedback,
    synthesize_noise_matrices,
    tune_noise_intensity,
)

__all__ = [
    "DecayCertificate",
    "MeanSquareDecay",
    "baseline_growth",
    "certify_decay",
    "fit_decay_rate",
    "mean_square_decay",
    "seeds_agree",
    "ExperimentReport",
    "run_pipeline",
    "ExperimentConfig",
    "load_config",
    "BlowUpError",
    "ConfigError",
    "MatrixFormatError",
    "ModelError",
    "NumericalError",
    "SingularGramError",
    "SpectralError",
    "StratstabError",
    "TuningError",
    "ValidationError",
    "matrix_roundtrip",
    "read_matrix",
    "write_matrix",
    "AdvectionDiffusionSpec",
    "OperatorModel",
    "build_advection_diffusion",
    "build_from_matrix",
    "inner",
    "norm",
    "subdomain_mask",
    "LyapunovEstimate",
    "LyapunovParams",
    "SdeSystem",
    "SimulationParams",
    "Trajectory",
    "estimate_lyapunov",
    "integrate",
    "integrate_ensemble",
    "ito_correction",
    "simulate_closed_loop",
    "simulate_wong_zakai",
    "wong_zakai",
    "LyapunovWeight",
    "SpectralData",
    "UnstableDecomposition",
    "biorthonormalize",
    "check_semisimple",
    "eigendecompose",
    "project",
    "select_unstable_index",
    "solve_lyapunov",
    "unstable_count",
    "ActuatorSet",
    "FeedbackLaw",
    "NoiseDesign",
    "RealBasis",
    "build_actuators",
    "build_feedback",
    "build_real_basis",
    "build_real_feedback",
    "synthesize_noise_matrices",
    "tune_noise_intensity",
    "__version__",
]

__version__ = "0.1.0"
