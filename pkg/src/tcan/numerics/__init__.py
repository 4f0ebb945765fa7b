from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, rel_error
from .optim import AdamHyper, adam_step
from .tensor import NonFiniteError, Parameter, Tensor, backward, no_grad

__all__ = [
    "T", "Tensor", "Parameter", "NonFiniteError", "backward", "no_grad",
    "AdamHyper", "adam_step", "grad_check", "rel_error",
    "save_checkpoint", "load_checkpoint",
]
