from .tensor import Tensor, no_grad, custom_op, set_finite_checks
from .layers import Conv2d, BatchNorm2d, ReLU, Sigmoid, MaxPool2d, Linear, cross_entropy, softmax
from .optim import SGD, Adam
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tensor", "no_grad", "custom_op", "set_finite_checks",
    "Conv2d", "BatchNorm2d", "ReLU", "Sigmoid", "MaxPool2d", "Linear",
    "cross_entropy", "softmax", "SGD", "Adam",
    "save_checkpoint", "load_checkpoint",
]
