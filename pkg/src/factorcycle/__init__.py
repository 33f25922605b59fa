"""Cycle-consistent factor disentanglement with uncooperative optimization.

A pair of small MLPs (disentangler and entangler) is trained with cycle
reconstruction and least-squares adversaries on synthetic Gaussian factors.
In uncooperative mode each translator is updated only on steps where its
input is real, which removes the compensation channel that lets the pair
cheat the reconstruction loss; the cooperative baseline updates both
jointly. Quality is scored as the absolute Pearson correlation between the
hidden residual factor and the recovered one.
"""

from .autodiff import (
    GradCheckReport,
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    grad_check,
)
from .data import DomainSpec, Dataset, generate
from .evaluation import (
    MetricsRecord,
    ProbeReport,
    UndefinedMetricError,
    eval_disentanglement,
    matched_abs_corr,
    mismatch_probe,
    pearson_abs,
)
from .losses import (
    CycleOutputs,
    HistoryBuffer,
    LossWeights,
    cycle1,
    cycle2,
    gan_disc_loss,
    gan_gen_loss,
    recon_loss,
)
from .nets import (
    DiscriminatorSet,
    GeneratorSet,
    MlpParams,
    disentangle,
    discriminate,
    entangle,
    init_mlp,
    init_params,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
    spectral_scale,
)
from .training import (
    AdamState,
    MetricsHistory,
    OptimizerTriple,
    RunResult,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    adam_step,
    load_train_checkpoint,
    lr_at,
    run_experiment,
    save_train_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CycleOutputs",
    "Dataset",
    "DiscriminatorSet",
    "DomainSpec",
    "GeneratorSet",
    "GradCheckReport",
    "HistoryBuffer",
    "LossWeights",
    "MetricsHistory",
    "MetricsRecord",
    "MlpParams",
    "NonFiniteError",
    "OptimizerTriple",
    "ProbeReport",
    "RunResult",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "TrainingDiverged",
    "UndefinedMetricError",
    "adam_step",
    "backward",
    "cycle1",
    "cycle2",
    "disentangle",
    "discriminate",
    "entangle",
    "eval_disentanglement",
    "gan_disc_loss",
    "gan_gen_loss",
    "generate",
    "grad_check",
    "init_mlp",
    "init_params",
    "load_checkpoint",
    "load_train_checkpoint",
    "lr_at",
    "matched_abs_corr",
    "mismatch_probe",
    "mlp_forward",
    "pearson_abs",
    "recon_loss",
    "run_experiment",
    "save_checkpoint",
    "save_train_checkpoint",
    "spectral_scale",
    "__version__",
]
