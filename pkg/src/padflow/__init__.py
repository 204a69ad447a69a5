"""padflow: a desk-scale normalizing-flow lab for padding-dimensional
dequantization, with coupling flows, sample-based metrics, a flow-prior VAE,
and a planar-arm inverse-kinematics benchmark."""

from .autodiff import Adam, Mlp, Tensor, no_grad
from .dequant import (
    DequantStrategy,
    PaddingNoiseConfig,
    paddingflow_augment,
    softflow_augment,
    strip_padding_gen,
    strip_padding_norm,
    uniform_augment,
)
from .flows import ActNorm, CouplingLayer, FlowModel, Permutation, build_flow
from .metrics import PointSet, SetOfSets, chamfer, cov, emd, hungarian_assign, l2_ordered, mmd

__all__ = [
    "Adam", "Mlp", "Tensor", "no_grad",
    "DequantStrategy", "PaddingNoiseConfig", "paddingflow_augment",
    "softflow_augment", "strip_padding_gen", "strip_padding_norm",
    "uniform_augment",
    "ActNorm", "CouplingLayer", "FlowModel", "Permutation", "build_flow",
    "PointSet", "SetOfSets", "chamfer", "cov", "emd", "hungarian_assign",
    "l2_ordered", "mmd",
]

__version__ = "0.1.0"
