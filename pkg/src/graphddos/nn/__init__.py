from . import ops
from .gradcheck import GradCheckReport, check_gradients, fd_gradient, max_rel_err
from .layers import LayerNorm, Linear
from .optim import Adam
from .params import Parameter, ParameterBag
from .rng import RngStream

__all__ = [
    "ops",
    "Adam",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "Parameter",
    "ParameterBag",
    "RngStream",
    "check_gradients",
    "fd_gradient",
    "max_rel_err",
]
