"""Minimal numpy neural-network kernel used by the learned detectors."""

from .functional import (
    bce_loss,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    maxpool2,
    maxpool2_backward,
    mse_loss,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)
from .gradcheck import grad_check
from .io import WeightFileError, load_weights, save_weights
from .network import LayerSpec, Network, ad_layers, sd_layers
from .optim import Adam, adam_step
