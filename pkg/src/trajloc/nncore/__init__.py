"""From-scratch dense and recurrent network maths on numpy."""

from .cells import GATE_COUNT, Cell, ShapeError, sigmoid
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_gradients, relative_error
from .layers import Bidirectional, Dense, Recurrent, apply_dropout, bidirectional_step
from .losses import loss_sequence, loss_single, mean_distance
from .network import FeedForward, SequenceNetwork
from .optim import OptimizerState, clip_global_norm, optimizer_step

__all__ = [
    "GATE_COUNT", "Cell", "ShapeError", "sigmoid",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "check_gradients", "numerical_gradients", "relative_error",
    "Bidirectional", "Dense", "Recurrent", "apply_dropout", "bidirectional_step",
    "loss_sequence", "loss_single", "mean_distance",
    "FeedForward", "SequenceNetwork",
    "OptimizerState", "clip_global_norm", "optimizer_step",
]
