from . import tensor as ops
from .container import ContainerError, read_container, write_container
from .gradcheck import GradCheckReport, gradient_check
from .layers import (affine, affine_forward, gcn_forward, gru_cell_forward, gru_sequence,
                     gru_unrolled,
                     init_affine, init_gru, init_mlp, mlp_forward)
from .optim import Adam, adam_step
from .params import RNG_ALGORITHM, ParamStore, backward, make_rng
from .tensor import DimensionError, NonFiniteError, NumericsError, StateError, Tensor

__all__ = [
    "ops", "Tensor", "ParamStore", "backward", "make_rng", "RNG_ALGORITHM",
    "affine", "affine_forward", "init_affine", "init_mlp", "mlp_forward",
    "init_gru", "gru_cell_forward", "gru_sequence", "gru_unrolled", "gcn_forward",
    "Adam", "adam_step", "gradient_check", "GradCheckReport",
    "write_container", "read_container", "ContainerError",
    "NumericsError", "DimensionError", "StateError", "NonFiniteError",
]
