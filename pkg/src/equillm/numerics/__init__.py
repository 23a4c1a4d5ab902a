"""Dense float64 tensors with reverse-mode autodiff, layers, Adam, checkpoints."""

from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .nn import MLP, Linear, Module, affine, glorot, mlp_forward
from .optim import Adam, AdamState, ParamGroup, adam_step
from .tensor import Tensor, as_tensor, backward, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "Linear",
    "MLP",
    "Module",
    "ParamGroup",
    "Tensor",
    "adam_step",
    "affine",
    "as_tensor",
    "backward",
    "finite_diff_check",
    "glorot",
    "load_into",
    "mlp_forward",
    "no_grad",
    "read_checkpoint",
    "save_checkpoint",
]
