from .backend import BACKEND
from .layers import (
    BatchNormState,
    Parameter,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    global_avgpool_backward,
    global_avgpool_forward,
    linear_backward,
    linear_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .optim import Adam, adam_step
