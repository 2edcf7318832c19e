"""From-scratch differentiable layers, models, losses, and verification."""

from .layers import (  # noqa: F401
    AddChannelAxis,
    AvgPool,
    BatchNorm,
    Concat,
    Conv1dTemporal,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    Elu,
    Flatten,
    Param,
    Relu,
    SeparableConv2d,
    Sequential,
)
from .losses import kl_divergence, kl_grad_logits, kl_loss, softmax  # noqa: F401
from .models import (  # noqa: F401
    BUILDERS,
    MultiModal,
    build_conv2d_branch,
    build_eegnet,
    build_mlp,
    build_multimodal,
    conv2d_branch_feature_dim,
    count_params,
    eegnet_feature_dim,
)
from .gradcheck import grad_check  # noqa: F401
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
