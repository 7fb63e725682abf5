from .kernels import BACKEND
from .tensor import OPS, Tape, Tensor, forward_op

__all__ = ["BACKEND", "OPS", "Tape", "Tensor", "forward_op"]
