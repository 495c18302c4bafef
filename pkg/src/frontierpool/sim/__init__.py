"""Desk-scale synthetic environment and training loop."""

from __future__ import annotations

from .config import RunConfig, reference_scenario
from .loop import RunLog, StepTiming, TrainingLoop, run_training
from .metrics import compute_to_target, frozen_landscape_eval, frozen_pool, steps_to_target
from .policy import SyntheticPolicy, simulate_group, synth_augment
from .teacher import TicketStatus, VerificationTicket, VirtualTeacher, teacher_drain, teacher_submit

__all__ = [
    "RunConfig",
    "RunLog",
    "StepTiming",
    "SyntheticPolicy",
    "TicketStatus",
    "TrainingLoop",
    "VerificationTicket",
    "VirtualTeacher",
    "compute_to_target",
    "frozen_landscape_eval",
    "frozen_pool",
    "reference_scenario",
    "run_training",
    "simulate_group",
    "steps_to_target",
    "synth_augment",
    "teacher_drain",
    "teacher_submit",
]
