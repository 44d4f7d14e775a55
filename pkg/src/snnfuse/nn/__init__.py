from . import checkpoint, kernels
from .layers import BatchNorm2d, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2, Param, Sequential, Spiking
from .model import ModelSpec, SpikingNet, build_baseline, conv_block, forward_unimodal
