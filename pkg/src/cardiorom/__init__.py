"""Adaptive reduced-order models for the Aliev-Panfilov monodomain equations.

The package assembles trilinear brick FE operators, marches the full model
with an IMEX scheme, builds POD-Galerkin ROMs with DEIM hyperreduction and
grows them with an estimator-driven greedy loop.
"""

from .assembly import (
    AssembledOperators,
    Mesh,
    assemble_operators,
    build_block_mesh,
    load_operators,
    mesh_hash,
    save_operators,
)
from .config import RunConfig, load_config, shipped_config
from .errors import (
    CardioRomError,
    InvalidArgumentError,
    AssemblyError,
    DimensionError,
    ValidationError,
    SingularityError,
    FactorizationError,
    DivergenceError,
    SelectionError,
    HyperreductionBuildError,
    EstimationError,
    UndefinedMetricError,
)
from .estimation import (
    EstimatorState,
    build_dual,
    build_residual_operator,
    compute_beta,
    direct_residual_norms,
    error_estimate,
    estimate_rho_bar,
    metrics,
    output_scaling,
    primal_residual,
    relative_error,
    residual_norms,
)
from .fom import StimulusProtocol, build_fom, solve_fom, sustained_activity
from .greedy import (
    GreedyConfig,
    TrainingSets,
    adapt_training_set,
    fit_rbf,
    eval_rbf,
    parameter_grid,
    run_apodg_ei,
    run_apodg_ei_adapt,
    update_counts,
)
from .reaction import APParameters, eval_reaction
from .reduction import (
    BlockBasis,
    build_hyperreduction,
    deim_select,
    galerkin_project,
    load_rom,
    orthonormalize,
    pod,
    save_rom,
    solve_rom,
    update_basis,
)

__version__ = "0.1.0"
