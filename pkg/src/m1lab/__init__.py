"""m1lab: computable Skorokhod M1 machinery.

Graph-based M1 distances and oscillation moduli for cadlag paths, a Hermite
norm ladder with certified Hilbert-Schmidt truncations, simulation of an
absorbed correlated particle system, tightness diagnostics, and a splitting
solver for the limiting stochastic PDE.
"""

__version__ = "0.1.0"

from .paths import (
    CadlagPath,
    VectorPath,
    CompletedGraph,
    completed_graph,
    segment_distance,
    m1_modulus,
    m1_modulus_batch,
    j1_modulus,
    endpoint_oscillation,
)
from .metric import (
    MatchingResult,
    ParametricRepresentation,
    m1_distance,
    m1_distance_refined,
    projection_distance,
    sample_parametrization,
)
from .hermite import (
    CertificationReport,
    DirectionNet,
    ModulusBoundReport,
    NormLadder,
    TestFunction,
    build_direction_net,
    certify_direction_net,
    choose_truncation,
    hermite_eval,
    hs_tail,
    net_test_functions,
    norm_n,
    verify_modulus_bound,
)
from .particles import (
    InitialLaw,
    ModelConfig,
    ParticleEnsemble,
    RhoTable,
    evolution_residual,
    load_ensemble,
    loss_process,
    project,
    project_stopped,
    save_ensemble,
    simulate,
)
from .spde import (
    ConvergenceReport,
    DensitySolution,
    convergence_study,
    project_density,
    solve,
)
from .tightness import (
    EndpointReport,
    FddReport,
    FourthMomentReport,
    TailFitReport,
    decomposition_check,
    endpoint_condition_check,
    fdd_compare,
    fit_exceedance_surface,
    fourth_moment_scaling,
    sample_triples,
    tail_exponent_fit,
)
from .errors import (
    CapacityError,
    ConfigError,
    M1LabError,
    StabilityError,
)

__all__ = [
    "__version__",
    "CadlagPath",
    "VectorPath",
    "CompletedGraph",
    "completed_graph",
    "segment_distance",
    "m1_modulus",
    "m1_modulus_batch",
    "j1_modulus",
    "endpoint_oscillation",
    "MatchingResult",
    "ParametricRepresentation",
    "m1_distance",
    "m1_distance_refined",
    "projection_distance",
    "sample_parametrization",
    "CertificationReport",
    "DirectionNet",
    "ModulusBoundReport",
    "NormLadder",
    "TestFunction",
    "build_direction_net",
    "certify_direction_net",
    "choose_truncation",
    "hermite_eval",
    "hs_tail",
    "net_test_functions",
    "norm_n",
    "verify_modulus_bound",
    "InitialLaw",
    "ModelConfig",
    "ParticleEnsemble",
    "RhoTable",
    "evolution_residual",
    "load_ensemble",
    "loss_process",
    "project",
    "project_stopped",
    "save_ensemble",
    "simulate",
    "ConvergenceReport",
    "DensitySolution",
    "convergence_study",
    "project_density",
    "solve",
    "EndpointReport",
    "FddReport",
    "FourthMomentReport",
    "TailFitReport",
    "decomposition_check",
    "endpoint_condition_check",
    "fdd_compare",
    "fit_exceedance_surface",
    "fourth_moment_scaling",
    "sample_triples",
    "tail_exponent_fit",
    "CapacityError",
    "ConfigError",
    "M1LabError",
    "StabilityError",
]
