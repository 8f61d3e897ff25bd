"""Finite-depth models of L^p Cuntz-type representations on the full shift.

Submodules
----------
symbolic   words, cylinder indexing, locally constant functions
transfer   potentials, transfer operators, fixed-point measures, Perron roots
lp_rep     weighted L^p spaces, the operators pi, T, S, T_i, S_i and their checks
ergopt     Markov measures, entropy and the variational problem
spectral   spectral radius of pi(a) T and pseudospectral evidence
cli        command line interface
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    DepthError,
    LpCuntzError,
    ResourceError,
    SingularityError,
    UnsupportedKindError,
    ValidationError,
)
from .symbolic import CylinderFunction, Word, indicator  # noqa: E402
from .transfer import Potential, apply_transfer, fixed_point_measure, radius_gelfand, radius_perron  # noqa: E402
from .lp_rep import Representation, cuntz_family, exact_norm, verify_covariance  # noqa: E402
from .ergopt import MarkovMeasure, entropy, gibbs_maximizer, maximize_numeric  # noqa: E402
from .spectral import compress, disk_report, gauge_scale, pseudospectrum, radius  # noqa: E402

__all__ = [
    "ConvergenceError", "DepthError", "LpCuntzError", "ResourceError", "SingularityError",
    "UnsupportedKindError", "ValidationError", "CylinderFunction", "Word", "indicator",
    "Potential", "apply_transfer", "fixed_point_measure", "radius_gelfand", "radius_perron",
    "Representation", "cuntz_family", "exact_norm", "verify_covariance", "MarkovMeasure",
    "entropy", "gibbs_maximizer", "maximize_numeric", "compress", "disk_report", "gauge_scale",
    "pseudospectrum", "radius",
]
