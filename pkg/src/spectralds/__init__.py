"""Spectral filtering for diagonal linear dynamical systems, and distillation
of spectral-filter models back into explicit recurrent form."""

from .basis import (HankelSpec, SpectralBasis, compute_basis, hankel_dense,
                    hankel_entry, hankel_matvec, negate_filter)
from .distill import (AlphaSampler, DistilledFilters, GdConfig, PairBank,
                      RecurrentStu, assemble_filter_lds, build_pair_bank,
                      deep_coverage_sampler, distill_stu_model,
                      find_spectral_representation, lds_to_lds,
                      practical_distill, spectral_to_lds)
from .lds import (NOISY_PRESET, DiagonalLds, LdsState, NoiseSpec,
                  geometric_filters, impulse_response, mu_filter, simulate,
                  step)
from .stu import (ArParams, IoFitConfig, Projections, StuParams,
                  fit_stu_to_impulse, fit_stu_to_lds_io, forward_ar,
                  forward_nonar, project_inputs, stu_impulse)

__version__ = "0.1.0"

__all__ = [
    "HankelSpec", "SpectralBasis", "compute_basis", "hankel_dense",
    "hankel_entry", "hankel_matvec", "negate_filter",
    "AlphaSampler", "DistilledFilters", "GdConfig", "PairBank",
    "RecurrentStu", "assemble_filter_lds", "build_pair_bank",
    "deep_coverage_sampler", "distill_stu_model",
    "find_spectral_representation", "lds_to_lds", "practical_distill",
    "spectral_to_lds",
    "NOISY_PRESET", "DiagonalLds", "LdsState", "NoiseSpec",
    "geometric_filters", "impulse_response", "mu_filter", "simulate", "step",
    "ArParams", "IoFitConfig", "Projections", "StuParams",
    "fit_stu_to_impulse", "fit_stu_to_lds_io", "forward_ar", "forward_nonar",
    "project_inputs", "stu_impulse",
]
