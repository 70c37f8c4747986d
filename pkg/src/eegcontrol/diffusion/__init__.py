from .backbone import BackboneHandle, ToyBackbone, load_backbone, train_toy_backbone
from .residuals import ControlResiduals, EncoderOutput, inject_residuals
from .schedule import NoiseSchedule, add_noise

__all__ = [
    "BackboneHandle",
    "ControlResiduals",
    "EncoderOutput",
    "NoiseSchedule",
    "ToyBackbone",
    "add_noise",
    "inject_residuals",
    "load_backbone",
    "train_toy_backbone",
]
