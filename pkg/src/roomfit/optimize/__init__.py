"""Losses, descriptors, optimizer and stage drivers."""

from .adam import AdamState, adam_step
from .crops import CropPair, auto_crop_pairs
from .descriptor import descriptor_distance, gram_descriptor
from .lights import init_lights, init_radiance
from .losses import loss_box, loss_final_crop, loss_final_full, loss_obj
from .stages import (
    FinalTargets, ObjectTargets, RoomTargets, StageConfig, TraceRow,
    make_final_targets, run_stage,
)

__all__ = [
    "AdamState", "CropPair", "FinalTargets", "ObjectTargets", "RoomTargets",
    "StageConfig", "TraceRow", "adam_step", "auto_crop_pairs",
    "descriptor_distance", "gram_descriptor", "init_lights", "init_radiance",
    "loss_box", "loss_final_crop", "loss_final_full", "loss_obj",
    "make_final_targets", "run_stage",
]
