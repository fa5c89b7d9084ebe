from .checkpoint import CheckpointError, load_params, save_params
from .gradcheck import gradcheck, numeric_grad, relative_error
from .layers import dense, glorot, graph_filter, normalized_gso, shift_powers, temporal_conv
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor, add, complex_matmul, concat, conj, cos, crelu, div, exp, getitem, imag_part,
    magnitude, make_complex, matmul, mean, mul, no_grad, power, real_part, relu, relu_plus,
    reshape, sigmoid, sin, square_norm, stack, sub, tanh, tensor, transpose, tsum,
)

__all__ = [
    "Adam", "AdamState", "CheckpointError", "Tensor", "adam_step", "add", "complex_matmul",
    "concat", "conj", "cos", "crelu", "dense", "div", "exp", "getitem", "glorot", "gradcheck",
    "graph_filter", "imag_part", "load_params", "magnitude", "make_complex", "matmul", "mean",
    "mul", "no_grad", "normalized_gso", "power", "numeric_grad", "real_part", "relative_error", "relu",
    "relu_plus", "reshape", "save_params", "shift_powers", "sigmoid", "sin", "square_norm",
    "stack", "sub", "tanh", "temporal_conv", "tensor", "transpose", "tsum",
]
