"""Simulation laboratory for off-manifold adversarial vulnerability.

Synthesizes union-of-immersed-clusters data with an ambient-intrinsic
dimension gap, trains two-layer ReLU networks to zero loss, and measures
how the gap creates off-manifold adversarial directions: projected attacks,
closed-form attack directions with exact constant evaluation, Monte Carlo
checks of the high-probability events, and intrinsic-dimension estimators.
"""

__version__ = "0.1.0"

from .attacks import AttackSpec, minimal_strength_threshold, pgd_attack, theory_attack
from .datagen import AmbientSpec, build_manifold, sample_cluster_means, synthesize
from .linalg import build_projectors, sample_orthonormal_immersion, semi_inner
from .network import NetParams, TrainConfig, forward, init_params, kkt_diagnostics, train_gd
from .theory import compute_constants, monte_carlo_verify, predict_bounds

__all__ = [
    "__version__",
    "AmbientSpec",
    "AttackSpec",
    "NetParams",
    "TrainConfig",
    "build_manifold",
    "build_projectors",
    "compute_constants",
    "forward",
    "init_params",
    "kkt_diagnostics",
    "minimal_strength_threshold",
    "monte_carlo_verify",
    "pgd_attack",
    "predict_bounds",
    "sample_cluster_means",
    "sample_orthonormal_immersion",
    "semi_inner",
    "synthesize",
    "theory_attack",
    "train_gd",
]
