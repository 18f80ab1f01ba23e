from .adam import Adam
from .checkpoint import load_checkpoint, save_checkpoint
from .convops import BACKEND
from .gradcheck import GradCheckReport, grad_check
from .layers import Conv2d, Dense, Relu, Sigmoid, sigmoid

__all__ = [
    "Adam",
    "BACKEND",
    "Conv2d",
    "Dense",
    "GradCheckReport",
    "Relu",
    "Sigmoid",
    "grad_check",
    "load_checkpoint",
    "save_checkpoint",
    "sigmoid",
]
