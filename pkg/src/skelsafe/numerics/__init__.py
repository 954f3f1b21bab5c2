from . import autodiff as ad
from .autodiff import Graph, Node, backward, grad_check
from .optim import AdamState, adam_step
from .rng import SeededRng, derive_seed
from .stable import NumericsError, entropy, log_softmax, log_sum_exp, softmax

__all__ = [
    "ad",
    "Graph",
    "Node",
    "backward",
    "grad_check",
    "AdamState",
    "adam_step",
    "SeededRng",
    "derive_seed",
    "NumericsError",
    "entropy",
    "log_softmax",
    "log_sum_exp",
    "softmax",
]
