from .layers import (
    Conv2D, Dense, Flatten, MaxPool2D, SigmoidOutput,
    bce_loss, conv2d_forward, dense_forward, maxpool2d_forward, relu, sigmoid,
)
from .network import Network, backward
from .optim import SGD, Adam, OptimizerConfig, sgd_step
