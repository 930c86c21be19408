"""Neural state-space system identification with pluggable initial-state
estimators, trained by truncated simulation-error minimization over
subsequences, plus a factorial experiment runner and effects analysis."""

from .autodiff import ParamStore, Tape, backward, forward, grad_check
from .data import (Dataset, Normalizer, enumerate_windows, load_csv, sample_batch,
                   save_csv, split_train_val, synth_integrator_system, synth_system)
from .estimators import ESTIMATOR_KINDS, StateEstimator, build_estimator, estimate
from .evaluation import FitReport, evaluate_model, fit_index
from .experiments import FactorGrid, RunRecord, enumerate_grid, replicate, run_campaign
from .nets import LstmSpec, MlpSpec, init_params, lstm_forward, mlp_forward
from .ssmodel import (ModelSpec, NeuralStateSpaceModel, batched_rollout, build_model,
                      simulate, step)
from .training import (AdamState, Checkpoint, TrainConfig, adam_step, full_sim_loss,
                       load_checkpoint, minibatch_loss, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "ParamStore", "Tape", "forward", "backward", "grad_check",
    "Dataset", "Normalizer", "load_csv", "save_csv", "split_train_val",
    "sample_batch", "enumerate_windows", "synth_system", "synth_integrator_system",
    "ESTIMATOR_KINDS", "StateEstimator", "build_estimator", "estimate",
    "FitReport", "fit_index", "evaluate_model",
    "FactorGrid", "RunRecord", "enumerate_grid", "run_campaign", "replicate",
    "MlpSpec", "LstmSpec", "init_params", "mlp_forward", "lstm_forward",
    "ModelSpec", "NeuralStateSpaceModel", "build_model", "step", "simulate",
    "batched_rollout",
    "TrainConfig", "AdamState", "adam_step", "minibatch_loss", "full_sim_loss",
    "train", "Checkpoint", "save_checkpoint", "load_checkpoint",
    "__version__",
]
