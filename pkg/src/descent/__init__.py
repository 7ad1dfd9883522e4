"""Exact gradient-flow learning curves for Gaussian covariate teacher-student models."""

from .spectra import (
    AtomSpectrum,
    KernelParams,
    MismatchedParams,
    NonisotropicParams,
    RidgelessParams,
    atoms_c0,
    hermite_equivalents,
    kernel_spectrum,
    mismatched_spectrum,
    model_from_dict,
    model_from_json,
    nonisotropic_asymptote,
    nonisotropic_spectrum,
    provider_for,
    ridgeless_spectrum,
)

__version__ = "0.1.0"

__all__ = [
    "AtomSpectrum",
    "KernelParams",
    "MismatchedParams",
    "NonisotropicParams",
    "RidgelessParams",
    "atoms_c0",
    "hermite_equivalents",
    "kernel_spectrum",
    "mismatched_spectrum",
    "model_from_dict",
    "model_from_json",
    "nonisotropic_asymptote",
    "nonisotropic_spectrum",
    "provider_for",
    "ridgeless_spectrum",
    "__version__",
]
