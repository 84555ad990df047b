"""Numerical lab for orbital free entropy at finite matrix size."""

from .entropy import (
    Theorem1Config,
    chi_u_free_tuple,
    chi_u_single,
    choose_delta_prime,
    run_theorem1_experiment,
    sigma,
)
from .matrixlab import MatrixTuple, RngStream, sample_gue, sample_haar_unitary
from .microstates import (
    MicrostateParams,
    VolumeEstimate,
    estimate_volume,
    in_gamma_orb,
    in_gamma_R,
    in_gamma_u,
    is_m_eps_free,
)
from .ncwords import StarWord, VariableSignature, enumerate_words, parse_word
from .targets import (
    FreeProduct,
    MomentOracle,
    SpectralMeasure,
    conjugated_family_oracle,
    free_family_oracle,
    free_product_moment,
    semicircular_moment,
    semicircular_oracle,
)

__version__ = "0.1.0"
