from .layers import (
    BN_BETA, BN_GAMMA, MULTIPLIER, SCALAR_BIAS, SCALAR_KINDS, WEIGHT,
    BatchNorm, Param, batchnorm_backward, batchnorm_forward,
)
from .losses import LossResult, cross_entropy, log_softmax, one_hot, soft_cross_entropy
from .network import BackwardResult, ForwardResult, Network, NetworkSpec, build
from .phsets import PhSet, ph_scaling_error, ph_sets, scaled_logits

__all__ = [
    "BN_BETA", "BN_GAMMA", "MULTIPLIER", "SCALAR_BIAS", "SCALAR_KINDS", "WEIGHT",
    "BatchNorm", "Param", "batchnorm_backward", "batchnorm_forward",
    "LossResult", "cross_entropy", "log_softmax", "one_hot", "soft_cross_entropy",
    "BackwardResult", "ForwardResult", "Network", "NetworkSpec", "build",
    "PhSet", "ph_scaling_error", "ph_sets", "scaled_logits",
]
