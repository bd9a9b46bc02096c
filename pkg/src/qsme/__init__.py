"""qsme: stochastic master equation simulation for measured qubit/photon systems.

Discrete-time measurement chains (Kraus channels with detector imperfections),
continuous-time diffusive and jump SMEs integrated with positivity/trace
preserving Kraus-map schemes, a deterministic ensemble-map reference, and the
conditional-expectation (martingale) verification harness.
"""

from .analysis import (
    EnsembleStats,
    LyapunovSpec,
    MartingaleReport,
    bloch_vector,
    bloch_z_lyapunov,
    diffusive_outcomes,
    ensemble_average,
    fock_population,
    lindblad_propagate,
    lindblad_step,
    martingale_check,
    mean_occupation,
    photon_number_lyapunov,
    purity,
    qnd_contraction_factor,
    qnd_fock_lyapunov,
    qubit_coherence_lyapunov,
    trace_distance,
)
from .channels import (
    GaussianMeter,
    KrausChannel,
    LeftStochasticMatrix,
    PartitionedChannel,
    channel_outcomes,
    counting_errors,
    discrete_step,
    gaussian_meter_imperfect_step,
    gaussian_meter_sample,
    identity_errors,
    meter_completeness_residual,
    meter_outcomes,
    partition,
    perfect,
    projective_measure,
    qnd_channel,
    resonant_channel,
    resonant_qubit_channel,
    run_discrete_ensemble,
    run_meter_ensemble,
    symmetric_errors,
)
from .diffusive import (
    DiffusiveModel,
    DiffusiveStepOperators,
    apply_diffusive_update,
    build_split_operators,
    build_step_operators,
    diffusive_step,
    diffusive_step_split,
    qubit_zmeas_model,
    run_diffusive,
    run_diffusive_ensemble,
)
from .errors import NumericalGuardError, QsmeError, ValidationError
from .jump import (
    JumpModel,
    MixedModel,
    jump_step,
    mixed_step,
    qubit_decay_model,
    resonant_discrete_to_jump_check,
    run_jump,
    run_jump_ensemble,
    run_mixed,
    run_mixed_ensemble,
    total_variation,
)
from .linalg import (
    HermitianEig,
    func_of_hermitian,
    herm_eig,
    herm_expm,
    inv_sqrt_psd,
    kron,
)
from .records import TrajectoryRecord
from .rng import RNG_ALGORITHM, trajectory_rng, trajectory_rngs
from .systems import (
    FockSpace,
    bloch_density,
    check_density,
    coherent,
    dispersive_propagator,
    maximally_mixed,
    pauli,
    pure_density,
    renormalize_density,
    resonant_propagator,
)

__version__ = "0.1.0"
