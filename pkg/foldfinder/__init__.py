from .core import DomainSpec, ParametricSystem, bifurcation_functional, lambda_of, ratio_profile
from .matrix import check_condition_R, check_matrix_R, perron_pair
from .solver import SolveConfig, Strategy, grid_oracle, solve_maxmin
from .certify import certify_saddle_node, probe_no_solutions_above, stationarity_residual
from .continuation import ContinuationConfig, fold_from_branch, refine_fold, trace_branch
from .problems import build_system, list_problems, load_problem, parse_problem
