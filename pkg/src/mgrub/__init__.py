"""Multiprocessor CBS/GRUB simulation with parallel and sequential bandwidth
reclaiming under Global-EDF."""

from .model import (
    AdmissionRejected, ConfigError, EngineInvariantError, FixedExec, Job, Mode,
    Policy, ReclaimState, ServerParams, ServerState, State, SystemConfig,
    TaskSpec, UniformExec,
)

__version__ = "0.1.0"
