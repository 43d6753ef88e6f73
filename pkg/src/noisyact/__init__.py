"""Noisy hard-saturating activations in a minimal autodiff laboratory.

Hard-saturating nonlinearities (clipped linearizations of sigmoid and
tanh) lose all gradient beyond their threshold; this package implements
the remedy of injecting trainable, saturation-proportional noise, plus
everything needed to study it end to end: a tape-based reverse-mode
autodiff engine, dense and recurrent blocks, annealed-noise training,
and a CLI harness for small reproducible experiments.
"""

from .autodiff import ForwardContext, Parameter, Tape, Tensor, VarId, as_tensor
from .activations import (
    BASE_FUNCTIONS,
    HALF_NORMAL_MEAN,
    HARD_SIGMOID,
    HARD_TANH,
    HardSatFn,
    NoiseMode,
    NoiseSample,
    NoisyActConfig,
    analytic_gradients,
    blend_form_value,
    delta,
    direction,
    expected_output,
    expected_output_value,
    forward_input_noise,
    forward_output_noise,
    hard_sat,
    linearize,
    make_noisy_config,
    noise_std,
    noisy_forward,
    output_noise_value,
)
from .datasets import (
    SyntheticDataset,
    distinct_counts,
    gen_gaussian_mixture,
    gen_unique_count,
    load_digits_dataset,
    split_train_eval,
)
from .experiments import (
    DemoResult,
    ExperimentConfig,
    NoiseSettings,
    OptimizerSettings,
    config_from_dict,
    default_config,
    load_config,
    run_anneal_demo,
    run_experiment,
    summarize_dir,
)
from .networks import (
    DenseLayer,
    GruCell,
    LstmCell,
    Mlp,
    SequenceClassifier,
    classify_sequence,
    dense_forward,
    gru_step,
    load_checkpoint,
    lstm_step,
    orthogonal,
    predict_classes,
    save_checkpoint,
    uniform_fan_in,
)
from .rng import RngStream
from .training import (
    AnnealSchedule,
    DivergenceError,
    MetricsRow,
    OptimizerState,
    Trainer,
    TrainLoopConfig,
    anneal_value,
    clip_global_norm,
    evaluate_model,
    optimizer_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
