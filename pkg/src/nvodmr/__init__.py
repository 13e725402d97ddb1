"""Orientation-resolved CW-ODMR modelling, fitting and field inversion for NV ensembles."""

from .fitting import (
    FitConfig,
    FitResult,
    LorentzianDipFitter,
    LorentzianPeak,
    NoPeaksFoundError,
    SingularFitError,
    detect_peaks,
    fit_multi_lorentzian,
    model_jacobian,
)
from .geometry import (
    FieldVector,
    InconsistentProjectionsError,
    NvAxis,
    ProjectionSet,
    SphericalField,
    SymmetryOperation,
    nv_axes,
    project_field,
    reconstruct_field,
    spherical_to_cartesian,
    symmetry_group,
)
from .hamiltonian import (
    HamiltonianParams,
    TransitionPair,
    TransitionTable,
    exact_transitions,
    first_order_transitions,
    zeeman_splitting,
)
from .inversion import (
    CandidateSet,
    DipFrequencies,
    EmptyCandidateSetError,
    FieldInverter,
    MagnitudeMultiset,
    UnpairableDipsError,
    degeneracy_count,
    dips_to_magnitudes,
    enumerate_candidates,
    invert_spectrum,
)
from .spectrum import (
    DipCountMap,
    FrequencyGrid,
    LineshapeParams,
    NoiseModel,
    SyntheticSpectrum,
    classify_case,
    cluster_dips,
    count_dips,
    dip_count_heatmap,
    synthesize_spectrum,
)

__version__ = "0.1.0"
