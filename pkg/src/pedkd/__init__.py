"""Distilling pedestrian-behavior labels from a teacher into small image
encoders, plus expert ensembles and trajectory fusion, on numpy."""

from .autograd import ContractError, Tensor, backward, grad_check
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ContractError", "Tensor", "backward", "grad_check", "__version__"]
