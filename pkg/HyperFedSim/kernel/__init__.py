# ruff: noqa: F401
from .gradcheck import numerical_gradient, relative_error
from .layers import (
    avgpool_backward,
    avgpool_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    dense_backward,
    dense_forward,
    flatten_backward,
    flatten_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    residual_add,
    residual_add_backward,
)
from .losses import kd_loss, log_softmax, softmax, softmax_cross_entropy
from .optim import AdamState, SgdState, adam_step, sgd_step
