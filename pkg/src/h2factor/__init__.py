"""Linear-complexity direct solver for dense kernel matrices held in
strong-admissibility hierarchical format.

The pipeline is: sample points, build a cluster tree, partition the
index square into admissible and dense blocks, assemble the compressed
representation with nested interpolation bases, recompress it
algebraically, factorize by recursive skeletonization, and solve by
substitution.  A dense reference path exists for validation at small n.
"""

from .factorization import FactorizationError, H2Factorization, factorize
from .geometry import ClusterTree, build_cluster_tree, generate_uniform_grid
from .h2core import (
    H2Matrix,
    absorb_low_rank,
    build_h2,
    estimate_norm2,
    h2_nbytes,
    matvec,
    orthogonalize_recompress,
)
from .harness import ExperimentConfig, RunReport, run, scaling_sweep, thread_sweep, validate
from .kernels import KernelSpec, default_diag_value, make_low_rank_factor
from .oracle import assemble_dense, dense_lu_solve, dense_norm2, dense_svd
from .solve import refined_solve, solve, solve_multi
from .structure import BlockPartition, dual_tree_traversal, sparsity_constant

__version__ = "0.1.0"

__all__ = [
    "BlockPartition",
    "ClusterTree",
    "ExperimentConfig",
    "FactorizationError",
    "H2Factorization",
    "H2Matrix",
    "KernelSpec",
    "RunReport",
    "absorb_low_rank",
    "assemble_dense",
    "build_cluster_tree",
    "build_h2",
    "default_diag_value",
    "dense_lu_solve",
    "dense_norm2",
    "dense_svd",
    "dual_tree_traversal",
    "estimate_norm2",
    "factorize",
    "generate_uniform_grid",
    "h2_nbytes",
    "make_low_rank_factor",
    "matvec",
    "orthogonalize_recompress",
    "refined_solve",
    "run",
    "scaling_sweep",
    "solve",
    "solve_multi",
    "sparsity_constant",
    "thread_sweep",
    "validate",
    "__version__",
]
