"""Work statistics of driven spin ladders and chains started in microcanonical states."""
from .model import (
    BasisIndex,
    Eigensystem,
    ModelSpec,
    StructuralError,
    apply,
    build_bath_hamiltonian,
    build_drive_operator,
    build_observable,
    build_static_hamiltonian,
    diagonalize,
    eigensystem,
)
from .propagator import (
    DriveProtocol,
    IntegrationError,
    TimeGrid,
    dense_propagator_oracle,
    propagate,
)
from .state_prep import (
    EmptyWindowError,
    EnergyWindow,
    PreparedState,
    gaussian_filter_state,
    microcanonical_pure,
    product_state,
    product_window_states,
)
from .spectral import (
    DosEstimate,
    EnergyDistribution,
    ExponentialFit,
    dos_exact,
    dos_typicality,
    energy_distribution,
    fit_exponential,
)
from .work_stats import (
    MixtureWeights,
    StiffnessReport,
    WorkPdf,
    chi,
    chi_bar,
    crooks_check,
    jarzynski_estimate,
    mixture_work_pdf,
    stiffness_scan,
    typicality_variance_probe,
    work_pdf,
)
from .fgr_eth import (
    WindowPartition,
    coarse_grained_map,
    eth_offdiagonal_stats,
    fgr_rates,
    rate_stiffness,
)
from .relaxation import canonical_equilibrium, diagonal_ensemble, relax_trajectory, relaxation_time

__version__ = "0.1.0"
