"""Quantum trajectory ensembles for the analytic double slit.

Simulates particle trajectories guided by either the Bohm phase-gradient
momentum field or its density-anchored revision, for the closed-form
superposition of two dispersing Gaussian packets, and tests ensemble
statistics against the exact quantum position and momentum densities.
"""

__version__ = "0.1.0"

from .dynamics import (
    IntegrationSchedule,
    Trajectory,
    default_schedule,
    guidance_velocity,
    integrate,
    integrate_batch,
    momentum_along,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleResult,
    Histogram,
    HistogramSpec,
    KSResult,
    SliceOutOfRange,
    TabulatedCDF,
    TimeSlice,
    build_histogram,
    central_dip_metric,
    default_config,
    default_histogram_specs,
    ks_critical,
    ks_test,
    momentum_cdf,
    position_cdf,
    run_ensemble,
    side_band_peak,
    slice_values,
)
from .sampling import (
    THEORIES,
    EnvelopeViolation,
    InitialCondition,
    SeededStream,
    make_initial_conditions,
    sample_momenta,
    sample_positions,
)
from .units import HBAR_NM2_ME_PS, UnitSystem, electron_units
from .wavefield import (
    DoubleSlitParams,
    NodeSingularity,
    continuity_residual,
    continuity_truncation_bound,
    envelope_density,
    momentum_density,
    node_floor,
    norm_constant,
    p_bb,
    p_revised,
    packet_amplitude,
    psi,
    psi_dx,
    rho,
    rho_peak_bound,
    schrodinger_residual,
    sigma_t,
    spread,
)

__all__ = [
    "HBAR_NM2_ME_PS",
    "THEORIES",
    "DoubleSlitParams",
    "EnsembleConfig",
    "EnsembleResult",
    "EnvelopeViolation",
    "Histogram",
    "HistogramSpec",
    "InitialCondition",
    "IntegrationSchedule",
    "KSResult",
    "NodeSingularity",
    "SeededStream",
    "SliceOutOfRange",
    "TabulatedCDF",
    "TimeSlice",
    "Trajectory",
    "UnitSystem",
    "build_histogram",
    "central_dip_metric",
    "continuity_residual",
    "continuity_truncation_bound",
    "default_config",
    "default_histogram_specs",
    "default_schedule",
    "electron_units",
    "envelope_density",
    "guidance_velocity",
    "integrate",
    "integrate_batch",
    "ks_critical",
    "ks_test",
    "make_initial_conditions",
    "momentum_along",
    "momentum_cdf",
    "momentum_density",
    "node_floor",
    "norm_constant",
    "p_bb",
    "p_revised",
    "packet_amplitude",
    "position_cdf",
    "psi",
    "psi_dx",
    "rho",
    "rho_peak_bound",
    "run_ensemble",
    "sample_momenta",
    "sample_positions",
    "schrodinger_residual",
    "side_band_peak",
    "sigma_t",
    "slice_values",
    "spread",
]
