"""Attackability estimation and transferability-regularized training for multi-label classifiers."""

__version__ = "0.1.0"

from .attacks import BudgetSpec, exact_attackability, greedy_attackability, min_norm_flip, pgd_attack
from .data import Dataset, SynthSpec, generate, load_csv, save_csv
from .errors import ConvergenceError, EnumerationCapError, TrainingDivergedError
from .metrics import EvalReport, f1_scores, phi_align, spearman
from .models import LinearModel, MlpModel, load_model, save_model
from .sae import c_wz, sae_bruteforce, sae_greedy, sae_score, transfer_vectors
from .training import TrainSpec, TrainTrace, hinge_loss, regularizer_value_and_grad, train

__all__ = [
    "BudgetSpec", "exact_attackability", "greedy_attackability", "min_norm_flip", "pgd_attack",
    "Dataset", "SynthSpec", "generate", "load_csv", "save_csv",
    "ConvergenceError", "EnumerationCapError", "TrainingDivergedError",
    "EvalReport", "f1_scores", "phi_align", "spearman",
    "LinearModel", "MlpModel", "load_model", "save_model",
    "c_wz", "sae_bruteforce", "sae_greedy", "sae_score", "transfer_vectors",
    "TrainSpec", "TrainTrace", "hinge_loss", "regularizer_value_and_grad", "train",
]
