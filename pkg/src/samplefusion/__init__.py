"""Learning a classifier from several noisy annotators with per-sample weights and confusion matrices."""
from .fusion import batch_fusion_loss_grad, clean_label, diag_penalty, fuse_target, fusion_loss, fusion_loss_grad
from .harness import ExperimentConfig, ExperimentReport, run_experiment, run_sweep
from .linalg import PermutationBasis, random_permutation_basis, reconstruct_confusion

__version__ = "0.1.0"
