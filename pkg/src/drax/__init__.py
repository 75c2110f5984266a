"""Discrete flow matching with tri-mixture probability paths.

Modules: ``core`` (distributions, RNG), ``scheduler`` (mixing weights and
velocity coefficients), ``path`` (probability paths), ``velocity`` (rates,
Euler steps, master-equation checks), ``posterior`` (exact and tabular
posteriors, training), ``sampling`` (generation, candidate scoring,
speculative decoding), ``theory`` (bound verification), ``synthtask``
(noisy-channel task and error rates) and ``cli``.
"""

from .core import RngHandle, SeqDistribution, Vocabulary, sample_categorical, temper, tv_distance
from .errors import DraxError
from .path import PathSpec, conditional_probs, marginal_path, sample_xt, sample_xt_relaxed
from .posterior import ExactPosterior, MidModel, TabularModel, TrainConfig, load_checkpoint, save_checkpoint, train_toy
from .sampling import CandidateSet, SamplerConfig, generate, generate_batch, generate_candidates, select, speculative_decode
from .scheduler import Schedule, kappa, kappa_dot, mid_peak, velocity_coeffs
from .synthtask import Task, cer, markov_task, rtfx, sample_pair, wer
from .velocity import euler_step, kolmogorov_check, marginal_velocity

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "DraxError",
    "ExactPosterior",
    "MidModel",
    "PathSpec",
    "RngHandle",
    "SamplerConfig",
    "Schedule",
    "SeqDistribution",
    "TabularModel",
    "Task",
    "TrainConfig",
    "Vocabulary",
    "cer",
    "conditional_probs",
    "euler_step",
    "generate",
    "generate_batch",
    "generate_candidates",
    "kappa",
    "kappa_dot",
    "kolmogorov_check",
    "load_checkpoint",
    "marginal_path",
    "marginal_velocity",
    "markov_task",
    "mid_peak",
    "rtfx",
    "sample_categorical",
    "sample_pair",
    "sample_xt",
    "sample_xt_relaxed",
    "save_checkpoint",
    "select",
    "speculative_decode",
    "temper",
    "train_toy",
    "tv_distance",
    "velocity_coeffs",
    "wer",
]
