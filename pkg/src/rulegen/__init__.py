"""Rule generation and rule extraction classifiers driven by linear programming."""

from rulegen.dataio import Dataset, Schema, class_vector, load_csv, split_candidates
from rulegen.rules import Condition, CostPolicy, Rule, canonicalize, coverage_matrix, rule_cost
from rulegen.lpcore import LpModel, LpSolution, build_rmp, reduced_cost, solve_lp
from rulegen.wtree import Forest, fit_forest, fit_tree, leaves_to_rules
from rulegen.fairness import FairnessSpec
from rulegen.rug import CgConfig, RuleModel, enumerate_rules_exact, fit_rug, solve_psp_exact
from rulegen.rux import RulePool, fit_rux, harvest_pool
from rulegen.evalkit import Metrics, evaluate, hinge_loss, predict

__version__ = "0.1.0"

__all__ = [
    "CgConfig",
    "Condition",
    "CostPolicy",
    "Dataset",
    "FairnessSpec",
    "Forest",
    "LpModel",
    "LpSolution",
    "Metrics",
    "Rule",
    "RuleModel",
    "RulePool",
    "Schema",
    "build_rmp",
    "canonicalize",
    "class_vector",
    "coverage_matrix",
    "enumerate_rules_exact",
    "evaluate",
    "fit_forest",
    "fit_rug",
    "fit_rux",
    "fit_tree",
    "harvest_pool",
    "hinge_loss",
    "leaves_to_rules",
    "load_csv",
    "predict",
    "reduced_cost",
    "rule_cost",
    "solve_lp",
    "solve_psp_exact",
    "split_candidates",
]
