from .forest import ForestParams, RandomForestModel, fit_forest, predict, tree_rng
from .logistic import LogisticModel, LogisticParams, fit_logistic, loss_and_grad, softmax
from .search import Choice, IntRange, SearchResult, SearchSpace, Trial, random_grid_search
from .tree import DecisionTree, Split, TreeParams, best_split, fit_tree, gini

__all__ = [
    "Choice", "DecisionTree", "ForestParams", "IntRange", "LogisticModel", "LogisticParams",
    "RandomForestModel", "SearchResult", "SearchSpace", "Split", "Trial", "TreeParams",
    "best_split", "fit_forest", "fit_logistic", "fit_tree", "gini", "loss_and_grad", "predict",
    "random_grid_search", "softmax", "tree_rng",
]
