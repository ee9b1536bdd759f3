from .augment import NO_AUGMENT, AugmentFlags, augment
from .backprop import BackwardError, backward, conv2d_backward, value_and_grad
from .losses import CHARBONNIER, L1, L2, LossKind, loss_backward, loss_forward
from .loop import LossCurve, TrainConfig, TrainingDiverged, fit
from .optim import AdamState, Constant, Cyclic, Range, StepHalving, adam_step, schedule_rate

__all__ = [
    "AdamState", "AugmentFlags", "BackwardError", "CHARBONNIER", "Constant", "Cyclic", "L1", "L2", "LossCurve",
    "LossKind", "NO_AUGMENT", "Range", "StepHalving", "TrainConfig", "TrainingDiverged", "adam_step", "augment",
    "backward", "conv2d_backward", "fit", "loss_backward", "loss_forward", "schedule_rate", "value_and_grad",
]
