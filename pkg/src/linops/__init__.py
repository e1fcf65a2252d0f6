"""Structure-aware, matrix-free linear algebra on operator expression trees.

Operators compose into expression trees (sums, products, Kronecker products,
blocks); operations (solve, eig, diag, trace, logdet, matrix functions,
pseudo-inverse) dispatch on that structure to the most efficient procedure,
with Krylov and stochastic base cases and closed-form differentiation rules.
"""

from .core import (
    PSD,
    SELF_ADJOINT,
    UNITARY,
    LinearOperator,
    MvmCounter,
    ParamRecord,
    ParamVector,
    annotate,
    dense,
    flatten_params,
    instrument,
    mvm,
    mvm_block,
    unflatten_params,
)
from .operators import (
    Circulant,
    Dense,
    Diagonal,
    FunctionOperator,
    Identity,
    LowRank,
    Permutation,
    ScalarIdentity,
    SparseCSR,
    Triangular,
    Tridiagonal,
    Zero,
    csr_from_dense,
    jacobi_preconditioner,
)
from .compose import (
    Block2x2,
    BlockDiagonal,
    Concat,
    Kronecker,
    KroneckerSum,
    Product,
    Scaled,
    Sum,
    Transposed,
    adjoint,
    scale,
    transpose,
)
from .krylov import (
    IterStats,
    KrylovFactorization,
    SolveParams,
    arnoldi,
    cg,
    gmres,
    householder_arnoldi,
    lanczos,
    minres,
    power_iteration,
    randomized_svd,
    slq_logdet,
)
from .stochastic import (
    ProbeConfig,
    SvrgParams,
    doubly_stochastic_diag,
    doubly_stochastic_trace,
    hutchinson_diag,
    hutchinson_trace,
    svrg_nullspace,
    svrg_solve,
    svrg_topk_eigs,
)
from .dispatch import (
    EigResult,
    Pattern,
    Registry,
    SolveResult,
    apply_fn,
    build_registry,
    diag,
    eig,
    expm,
    factored_inverse,
    inverse,
    logdet,
    logm,
    pinv,
    pinv_apply,
    register_rule,
    solve,
    sqrtm,
    trace,
)
from .grad import (
    FdReport,
    ParamCotangent,
    fd_check,
    objective_from_tree,
    param_vjp_mvm,
    vjp_diag,
    vjp_eigvals,
    vjp_eigvec,
    vjp_logdet,
    vjp_solve,
)
from .mmio import read_matrix_market, write_matrix_market
from . import config, errors

__version__ = "0.1.0"
