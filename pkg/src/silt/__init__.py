"""Self-intersection local times of Gaussian integrators.

Numerical laboratory for integrator paths x(t) = (A 1_[0,t], xi): Gram
determinant identities, simplex Monte Carlo, smoothed local-time moments,
transform/chaos machinery, and Clark-type martingale integrands.
"""

from .errors import (
    ConfigError,
    DegeneracyError,
    EmptyBasisError,
    IntegrabilityError,
    ResolutionError,
    ScopeError,
    SiltError,
    ToleranceError,
)
from .functions import (
    GridFunction,
    Interval,
    StepFunction,
    grid_function,
    indicator,
    inner_product,
    norm_sq,
    orthonormalize,
)
from .gram import (
    GramMatrix,
    cavalieri_both_sides,
    gram_det,
    gram_matrix,
    indicator_gram_lower_bound,
    projection_norm_sq,
)
from .operators import (
    Identity,
    Multiplication,
    Operator,
    ProjectionComplement,
    increment_gram,
    parse_operator,
)
from .simplex import (
    MCEstimate,
    SimplexTuple,
    dyson_closed_form,
    mc_simplex_integrate,
    sample_simplex,
)
from .sampler import (
    JointSample,
    PathGrid,
    bridge_covariance_check,
    ito_sum,
    pairing,
    sample_joint,
    sample_joint_batch,
)
from .local_time import (
    EpsSchedule,
    estimate_T_eps,
    extrapolate_sqrt_eps,
    lattice_mean_T2,
    mean_T_eps_quad,
    mean_T_mult,
    mean_T_path_mc,
    mean_T_wiener,
    moment_smoothed,
    smoothed_density,
)
from .chaos import (
    ChaosSeriesReport,
    fw_transform_mc,
    fw_transform_mc_extrapolated,
    fw_transform_quad,
    kernel_b2n,
    overlap_kernel,
    second_moment_direct_and_series,
    second_moment_series,
    stirling_ratio_check,
)
from .clark import (
    BetaMatrices,
    ClarkDecomposition,
    GaussianDensity,
    clark_delta_fw_check,
    clark_delta_l2_residual,
    clark_general_fw_check,
    clark_wiener_l2_residual,
    density_grad,
    general_beta_matrices,
    wiener_beta,
    wiener_clark_decomposition,
)

__version__ = "0.1.0"
