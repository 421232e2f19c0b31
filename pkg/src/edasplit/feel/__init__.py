"""Feel Transformer: numpy autodiff engine, model, training and checkpoints."""
from .model import POOL_KERNELS, TOY_ARCH, ArchConfig, ModelParams, init_params, transformer_decompose
from .train import TrainConfig, gradcheck, train

__all__ = ["ArchConfig", "ModelParams", "TOY_ARCH", "POOL_KERNELS", "init_params",
           "transformer_decompose", "TrainConfig", "train", "gradcheck"]
