from . import autodiff
from .autodiff import Var, backprop_grad
from .net import MLPSpec, ParameterVector, init_mlp_params, mlp_forward
from .optim import AdamState, adam_init, adam_step
from .rng import Rng

__all__ = [
    "autodiff", "Var", "backprop_grad",
    "MLPSpec", "ParameterVector", "init_mlp_params", "mlp_forward",
    "AdamState", "adam_init", "adam_step",
    "Rng",
]
