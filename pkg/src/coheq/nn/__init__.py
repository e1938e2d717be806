"""Neural equalizers: layers, models, training, quantization, weight files."""
from .evaluation import EvalResult, equalize, evaluate_model, q_factor_with_specs
from .io import load_model, save_model
from .layers import (
    BiLstmLayer,
    Conv1dLayer,
    LstmParams,
    LstmState,
    MultCounter,
    bilstm_forward,
    conv1d,
    lstm_cell_step,
)
from .model import (
    ARCH_BILSTM_CNN,
    ARCH_DEEP_CNN,
    EqualizerModel,
    build_bilstm_cnn,
    build_deep_cnn,
)
from .quantized import FixedPointModel, quantize_int32
from .training import (
    AdamState,
    EqDataset,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    adam_step,
    retrain_with_approximation,
    train,
)

__all__ = [
    "ARCH_BILSTM_CNN",
    "ARCH_DEEP_CNN",
    "AdamState",
    "BiLstmLayer",
    "Conv1dLayer",
    "EqDataset",
    "EqualizerModel",
    "EvalResult",
    "FixedPointModel",
    "LstmParams",
    "LstmState",
    "MultCounter",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "adam_step",
    "bilstm_forward",
    "build_bilstm_cnn",
    "build_deep_cnn",
    "conv1d",
    "equalize",
    "evaluate_model",
    "load_model",
    "lstm_cell_step",
    "q_factor_with_specs",
    "quantize_int32",
    "retrain_with_approximation",
    "save_model",
    "train",
]
