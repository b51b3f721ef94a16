"""Minimal reverse-mode autodiff stack: tensors, layers, losses, optimizers,
a batch training loop, and a finite-difference gradient checker."""
from .gradcheck import GradCheckReport, GradProbe, check_gradients
from .layers import (
    ACTIVATIONS,
    MLP,
    Dense,
    LSTMCell,
    Module,
    dense_forward,
    init_weight,
    recurrent_step,
)
from .losses import (
    LOG_2PI,
    MixtureParams,
    bce_with_logits,
    component_log_likelihoods,
    gaussian_kl,
    mdn_loss_graph,
    mdn_nll,
    mse,
)
from .optim import SGD, Adam, Momentum, Optimizer
from .tensor import (
    Parameter,
    Tensor,
    exp,
    log,
    log_softmax,
    logsumexp,
    relu,
    sigmoid,
    softmax,
    tanh,
)
from .training import EpochRecord, History, TrainSchedule, fit

__all__ = [
    "ACTIVATIONS",
    "Adam",
    "Dense",
    "EpochRecord",
    "GradCheckReport",
    "GradProbe",
    "History",
    "LOG_2PI",
    "LSTMCell",
    "MixtureParams",
    "MLP",
    "Module",
    "Momentum",
    "Optimizer",
    "Parameter",
    "SGD",
    "Tensor",
    "TrainSchedule",
    "bce_with_logits",
    "check_gradients",
    "component_log_likelihoods",
    "dense_forward",
    "exp",
    "fit",
    "gaussian_kl",
    "init_weight",
    "log",
    "log_softmax",
    "logsumexp",
    "mdn_loss_graph",
    "mdn_nll",
    "mse",
    "recurrent_step",
    "relu",
    "sigmoid",
    "softmax",
    "tanh",
]
