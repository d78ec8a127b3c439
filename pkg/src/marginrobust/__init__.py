"""Margin-aware weighted adversarial training and non-uniform attack evaluation."""

__version__ = "0.1.0"

from .attack import AttackConfig, batch_attack, margin_pgd, pgd, weighted_pgd
from .data import Batch, Dataset, load_mnist_idx, minibatches, subsample, synth_gaussians
from .dro import DroSolution, dro_curve, solve_dro_weights
from .evaluation import (EvalReport, eval_natural, eval_robust, eval_sa, eval_tr, evaluate,
                         evaluate_many, mc_sampled_accuracy, weight_histogram)
from .exceptions import ConfigurationError, DomainError, IngestionError
from .nn import MLP, LossSpec, forward, grad_input, grad_params, init_mlp, per_example_loss, sgd_step, softmax_probs
from .training import TrainConfig, TrainLog, minibatch_unbiasedness_check, train, trades_batch_loss
from .weighting import WeightConfig, WeightVector, importance_weight, margin, normalize
