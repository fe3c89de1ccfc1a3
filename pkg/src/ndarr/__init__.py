from src.ndarr.tensor import ComputeGraph, Function, Tensor, as_tensor, backward, default_dtype, no_grad, precision
from src.ndarr.rng import RngStream, derive_seed
from src.ndarr.gradcheck import grad_check

__all__ = [
    "ComputeGraph",
    "Function",
    "Tensor",
    "as_tensor",
    "backward",
    "default_dtype",
    "no_grad",
    "precision",
    "RngStream",
    "derive_seed",
    "grad_check",
]
