"""Numerical laboratory for degenerate Kolmogorov operators of hypoelliptic type.

The package splits into engines that build on one another:

- ``lie_group``: block-structured drift matrices, anisotropic dilations, the
  translation group, and the covariance integral.
- ``kernel``: the explicit fundamental solution, its gradient, and closed-form
  vs quadrature space-time Lp norms.
- ``group_conv``: grid fields, group convolution, Young and embedding checks,
  and the constant-coefficient Cauchy solver.
- ``sde_oracle``: exact and Euler-Maruyama samplers for the underlying
  diffusion, with density-comparison reports.
- ``fd_solver``: an IMEX finite-difference scheme for variable-coefficient
  problems on box domains, with boundary classification and max-principle
  reporting.
- ``degiorgi``: truncation algebra, exponent bookkeeping, and the level-set
  iteration that certifies sup bounds from level energies.
- ``cli``: the ``kolmolab`` command, one JSON-configured experiment per run.
"""

from .degiorgi import (
    ExponentBundle,
    IterationState,
    TruncationParams,
    bootstrap_exponents,
    iteration_lemma,
    phi,
    psi,
    run_level_iteration,
    solve_exponents,
    truncation_inequality_suite,
    undercut,
)
from .errors import KolmoLabError, NumericalError, ValidationError
from .fd_solver import (
    BoundaryData,
    CoefficientSet,
    MaxPrincipleReport,
    ProductDomain,
    check_max_principle,
    classify_boundary,
    solve,
    sup_norm,
    transport_cfl_limit,
)
from .group_conv import (
    GridField,
    convolve,
    embedding_grad,
    embedding_l1,
    lp_norm,
    random_smooth_field,
    solve_cauchy,
    young_check,
)
from .kernel import (
    KernelContext,
    eval_K,
    grad_K,
    kernel_context,
    lp_norm_closed_form,
    lp_norm_quadrature,
    p_gradient_cutoff,
    p_kernel_cutoff,
    q_dual_cutoff,
)
from .lie_group import (
    BlockSpec,
    GroupElement,
    StructureMatrix,
    covariance,
    dilation,
    exp_neg_tB,
    group_inverse,
    group_op,
    identity_element,
    structure_from_json,
    validate_structure,
)
from .sde_oracle import (
    DensityReport,
    SampleBatch,
    density_error,
    euler_maruyama,
    exact_sample,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "BoundaryData",
    "CoefficientSet",
    "DensityReport",
    "ExponentBundle",
    "GridField",
    "GroupElement",
    "IterationState",
    "KernelContext",
    "KolmoLabError",
    "MaxPrincipleReport",
    "NumericalError",
    "ProductDomain",
    "SampleBatch",
    "StructureMatrix",
    "TruncationParams",
    "ValidationError",
    "bootstrap_exponents",
    "check_max_principle",
    "classify_boundary",
    "convolve",
    "covariance",
    "density_error",
    "dilation",
    "embedding_grad",
    "embedding_l1",
    "euler_maruyama",
    "eval_K",
    "exact_sample",
    "exp_neg_tB",
    "grad_K",
    "group_inverse",
    "group_op",
    "identity_element",
    "iteration_lemma",
    "kernel_context",
    "lp_norm",
    "lp_norm_closed_form",
    "lp_norm_quadrature",
    "p_gradient_cutoff",
    "p_kernel_cutoff",
    "phi",
    "psi",
    "q_dual_cutoff",
    "random_smooth_field",
    "run_level_iteration",
    "solve",
    "solve_cauchy",
    "solve_exponents",
    "structure_from_json",
    "sup_norm",
    "transport_cfl_limit",
    "truncation_inequality_suite",
    "undercut",
    "validate_structure",
]
