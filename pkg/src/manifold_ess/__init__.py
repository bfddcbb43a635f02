"""Kernel effective sample size for manifold-valued MCMC output."""

from .chainio import ChainFileError, read_chain, write_chain
from .estimator import (
    DegenerateChainError,
    EssReport,
    LagCovariances,
    WindowSpec,
    auto_bandwidth,
    center_gram,
    coordinate_ess,
    exact_population_ess,
    harmonic_mean_diagnostic,
    kernel_ess,
    lag_covariances,
    long_run_variance,
    precision_check,
    scalar_ess,
)
from .geometry import (
    Chain,
    CorrelationMatrix,
    GrassmannPoint,
    Rotation,
    SpdMatrix,
    UnitVector,
    ValidationError,
    cholesky_embed,
    haar_rotation,
    projection_embed,
    sphere_geodesic_distance,
    sym_exp,
    sym_log,
)
from .kernels import (
    GramMatrix,
    KernelSpec,
    gegenbauer_kernel_eval,
    geodesic_gauss_search,
    gram,
    kernel_eval,
    pd_audit,
    transported_spec,
)
from .mmd import (
    MmdResult,
    ReferenceEmbedding,
    corrected_risk_statistic,
    iid_risk_estimate,
    mmd2_empirical,
    mode_tv_error,
)
from .samplers import (
    ChainRunConfig,
    MixtureTarget,
    VmfParams,
    independence_mh,
    log_density_mixture,
    rwmh_sphere,
    sample_vmf_s2,
    tetrahedron_modes,
)

__version__ = "0.1.0"
