"""State-space diffusion imputer for multichannel time series.

Layers: a float64 tensor/tape substrate with reverse-mode gradients
(:mod:`ssmdiff.tensor`), structured state-space layers (:mod:`ssmdiff.ssm`),
the diffusion chain (:mod:`ssmdiff.diffusion`), mask generators
(:mod:`ssmdiff.masking`), masked metrics (:mod:`ssmdiff.metrics`), and the
training / imputation pipeline (:mod:`ssmdiff.pipeline`) behind the
``ssmdiff`` CLI.
"""

from .data import Dataset, Scaler, channel_join, channel_split, synth_dataset
from .diffusion import (
    ConditioningBundle,
    DiffusionSchedule,
    make_schedule,
    q_sample,
    reverse_sample,
    reverse_sample_batch,
    summarize_samples,
    training_loss,
    training_step,
)
from .masking import MaskPair, bm_mask, compose, rbm_mask, rm_mask, scenario_mask, tf_mask
from .metrics import EvalReport, eval_mask, evaluate, masked_mae, masked_mre, masked_mse, masked_rmse
from .model import Denoiser, ModelConfig, load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, adam_step, init_adam_state
from .pipeline import RunConfig, impute_run, train_model
from .rng import Rng
from .ssm import (
    S4Layer,
    SsmContinuous,
    SsmDiscrete,
    SsmKernel,
    apply_convolutional,
    apply_recurrent,
    discretize_bilinear,
    hippo_legs,
    materialize_kernel,
)
from .tensor import Tape, Tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "ConditioningBundle",
    "Dataset",
    "Denoiser",
    "DiffusionSchedule",
    "EvalReport",
    "MaskPair",
    "ModelConfig",
    "Rng",
    "RunConfig",
    "S4Layer",
    "Scaler",
    "SsmContinuous",
    "SsmDiscrete",
    "SsmKernel",
    "Tape",
    "Tensor",
    "adam_step",
    "apply_convolutional",
    "apply_recurrent",
    "bm_mask",
    "channel_join",
    "channel_split",
    "compose",
    "discretize_bilinear",
    "eval_mask",
    "evaluate",
    "hippo_legs",
    "impute_run",
    "init_adam_state",
    "load_checkpoint",
    "make_schedule",
    "masked_mae",
    "masked_mre",
    "masked_mse",
    "masked_rmse",
    "materialize_kernel",
    "no_grad",
    "q_sample",
    "rbm_mask",
    "reverse_sample",
    "reverse_sample_batch",
    "rm_mask",
    "save_checkpoint",
    "scenario_mask",
    "summarize_samples",
    "synth_dataset",
    "tf_mask",
    "train_model",
    "training_loss",
    "training_step",
]

__version__ = "0.1.0"
