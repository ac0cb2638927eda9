"""Explainable tree ensembles and additive models for OCT thickness grids."""

from .data import EyeSample, FeatureMatrix, ZoneMap, build_feature_matrix, load_dataset, select_eyes
from .ebm import EbmModel, EbmParams, ebm_explain, fit_ebm
from .ensembles import BoostingParams, ForestParams, fit_gradient_boosting, fit_random_forest, predict_proba
from .evaluation import compute_metrics, subject_kfold, welch_t_test
from .runner import ExperimentConfig, StudyResult, run_study
from .treeshap import brute_force_shap, global_summary, tree_shap

__all__ = [
    "EyeSample", "FeatureMatrix", "ZoneMap", "build_feature_matrix", "load_dataset", "select_eyes",
    "EbmModel", "EbmParams", "ebm_explain", "fit_ebm",
    "BoostingParams", "ForestParams", "fit_gradient_boosting", "fit_random_forest", "predict_proba",
    "compute_metrics", "subject_kfold", "welch_t_test",
    "ExperimentConfig", "StudyResult", "run_study",
    "brute_force_shap", "global_summary", "tree_shap",
]
