"""Warped functional regression: joint modeling of amplitude and phase
variability in paired samples of irregularly sampled curves."""

from .basis import SplineBasis, eval_basis, eval_matrix, gram, orthonormalize
from .exceptions import DegeneracyError, ModeSearchError
from .warp import (
    Warp,
    WarpSpec,
    fc_slopes,
    hermite_basis,
    hermite_h,
    identity_warp,
    jupp,
    jupp_inv,
    make_warp,
    warp_deriv,
    warp_eval,
    warp_invert,
)

__all__ = [
    "SplineBasis",
    "eval_basis",
    "eval_matrix",
    "gram",
    "orthonormalize",
    "DegeneracyError",
    "ModeSearchError",
    "WarpSpec",
    "Warp",
    "hermite_h",
    "hermite_basis",
    "fc_slopes",
    "make_warp",
    "identity_warp",
    "warp_eval",
    "warp_deriv",
    "warp_invert",
    "jupp",
    "jupp_inv",
]

__version__ = "0.1.0"
