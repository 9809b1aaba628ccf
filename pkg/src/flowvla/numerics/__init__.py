from .gradcheck import grad_check, numeric_grad, relative_error
from .ops import (
    add,
    concat,
    embedding_gather,
    gelu,
    kernels,
    matmul,
    mean,
    mul,
    reshape,
    rms_norm,
    rotary_apply,
    rotary_tables,
    sinusoidal_encode,
    slice,
    softmax,
    sub,
    sum,
    swish,
    transpose,
)
from .tensor import DEFAULT_DTYPE, Graph, NonFiniteError, ShapeError, Tensor, grad_enabled, no_grad
