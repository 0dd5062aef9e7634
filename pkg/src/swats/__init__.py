"""Stochastic first-order optimizers with automatic Adam-to-SGD switching,
plus desk-scale problems, a training harness and a CLI."""

from .numkit import (
    DimensionMismatchError,
    NonFiniteError,
    axpy,
    clip,
    div_eps,
    dot,
    ew_mul,
    ew_sqrt,
    ew_square,
    finite_diff_grad,
    param_vector,
    rng_stream,
)
from .optim import (
    Adagrad,
    Adam,
    AdamClip,
    AdamClipConfig,
    AdamConfig,
    ConfigError,
    RmsProp,
    Sgd,
    SgdConfig,
    StepReport,
    Swats,
    SwatsState,
    adagrad_step,
    adam_step,
    adamclip_step,
    estimate_sgd_lr,
    make_optimizer,
    rmsprop_step,
    sgd_step,
    swats_step,
)
from .problems import (
    Dataset,
    RankDeficientError,
    dataset_from_csv,
    dataset_to_csv,
    least_squares,
    logistic_regression,
    make_blobs,
    make_problem,
    mlp_classifier,
    quadratic,
    random_least_squares,
)
from .harness import (
    DEFAULT_ADAM_GRID,
    ExperimentConfig,
    GridSearchError,
    Schedule,
    TrainRecord,
    apply_schedule,
    clip_grad_norm,
    config_from_dict,
    gamma_trace,
    grid_tune,
    read_records_csv,
    run_experiment,
    validate_config,
)

__version__ = "0.1.0"
