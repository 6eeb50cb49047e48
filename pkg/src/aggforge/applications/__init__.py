"""Application batches and the learners that consume them."""
from .cube import ALL, cube_rows, cube_subsets, data_cube_batch, write_cube_csv
from .mutual_info import MiMatrix, chow_liu, mi_matrix, mi_term, mutual_information_batch, \
    pair_query_count, tree_weight
from .regression import CovarMatrix, ModelParams, batch_aggregate_count, bgd_train, closed_form, \
    covar_batch, covar_items, covar_matrix, gradient, linear_aggregate_count, monomials, objective, \
    poly_aggregate_count, poly_design, poly_regression_batch
from .trees import DecisionTreeNode, NodeState, PathFactors, cart_train, class_cost, \
    ct_node_batch, entropy, equi_depth_thresholds, gini, rt_node_batch, tree_aggregate_count, \
    variance_cost

__all__ = [n for n in dir() if not n.startswith("_")]
