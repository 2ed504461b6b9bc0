"""netcert: certified H-infinity analysis of unknown interconnected linear
systems from finite noisy input-state data, plus existence tests for
distributed dynamic controllers achieving a prescribed bound."""

from .analysis import (
    CertificationResult,
    InterconnectionGraph,
    ScaleSet,
    SupplyRate,
    certify_dissipativity,
    hinf_bound_structured,
    hinf_bound_unstructured,
)
from .datadriven import (
    NoiseBound,
    QmiSet,
    SubsystemData,
    TrajectoryData,
    dual_qmi,
    energy_bound,
    instrumental_bound,
    membership_dual,
    membership_primal,
    noise_membership,
    primal_qmi_lumped,
    primal_qmi_structured,
    split_trajectory,
)
from .sdpsolve import SolveOptions, SolveOutcome, bisect_gamma, solve
from .synthesis import (
    PerformanceSpec,
    SynthesisResult,
    SynthesisWitness,
    certify_synthesis_existence,
    min_gamma_synthesis,
)
from .truthoracle import (
    ExperimentConfig,
    SystemModel,
    example1_system,
    freq_grid_norm,
    generate_experiment,
    hinf_norm,
    random_cycle_system,
    simulate,
)

__version__ = "0.1.0"
