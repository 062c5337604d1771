"""Budget-constrained approximate inference in discrete factor graphs.

Builds an explicit search tree over variable prefixes with soft-Bellman
backups, guided by a prior state-action value function, and compares against
SIS/SMC/Gibbs/loopy-BP baselines under identical evaluation budgets.
"""

from .baselines import WeightedAtoms, bp_sample, gibbs, sis, smc
from .exact import ChainSolution, ExactSolution, exact_kl, is_chain, solve_chain, solve_exact
from .generators import GeneratorSpec, fg1_ordering, gen_chain, gen_fg1, gen_fg2, gen_permuted_chain, generate
from .logmath import ZeroMassError, logsumexp
from .metrics import EvalReport, delta_kl_atoms, delta_kl_sampler, energy_entropy_deltas, evaluate_method
from .model import BudgetLedger, Factor, FactorGraph, graph_from_json_dict, graph_to_json_dict, load_graph, save_graph
from .prior import (
    Adam,
    HeuristicPrior,
    MLPValueFunction,
    PriorDistribution,
    ReplayBuffer,
    TrainConfig,
    encode_prefix,
    load_checkpoint,
    save_checkpoint,
    train_loop,
    train_step,
)
from .search import SearchTree, TreeNode, backup, build_tree, expand, q_uct_select

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BudgetLedger",
    "ChainSolution",
    "EvalReport",
    "ExactSolution",
    "Factor",
    "FactorGraph",
    "GeneratorSpec",
    "HeuristicPrior",
    "MLPValueFunction",
    "PriorDistribution",
    "ReplayBuffer",
    "SearchTree",
    "TrainConfig",
    "TreeNode",
    "WeightedAtoms",
    "ZeroMassError",
    "backup",
    "bp_sample",
    "build_tree",
    "delta_kl_atoms",
    "delta_kl_sampler",
    "encode_prefix",
    "energy_entropy_deltas",
    "evaluate_method",
    "exact_kl",
    "expand",
    "fg1_ordering",
    "gen_chain",
    "gen_fg1",
    "gen_fg2",
    "gen_permuted_chain",
    "generate",
    "gibbs",
    "graph_from_json_dict",
    "graph_to_json_dict",
    "is_chain",
    "load_checkpoint",
    "load_graph",
    "logsumexp",
    "q_uct_select",
    "save_checkpoint",
    "save_graph",
    "sis",
    "smc",
    "solve_chain",
    "solve_exact",
    "train_loop",
    "train_step",
]
