"""Conditioned multi-head network, its training loops, checkpoints and inference."""

from .checkpoint import load_checkpoint, save_checkpoint
from .inference import InferenceResult, infer, time_forward
from .model import (STUDENT, TEACHER, ArchSpec, ConditionVector, ModelOutput, ToyModel, forward,
                    select_branch)
from .training import (TrainHistory, TrainSettings, distill_student, evaluate_model,
                       fixed_config, permutation_configs, phase_total_variation, train_teacher)

__all__ = [
    "ArchSpec", "ConditionVector", "InferenceResult", "ModelOutput", "STUDENT", "TEACHER",
    "ToyModel", "TrainHistory", "TrainSettings", "distill_student", "evaluate_model", "fixed_config",
    "forward", "infer", "load_checkpoint", "permutation_configs", "phase_total_variation",
    "save_checkpoint", "select_branch", "time_forward", "train_teacher",
]
