"""Teacher parameter updates: deep copy, EMA and double-EMA (DEMA).

The EMA form implemented by default uses an effective decay of alpha^2
(the printed update rule of the method under study); ``raw_alpha=True``
selects the classic single-alpha decay for comparison runs.  DEMA keeps
two EMA accumulators and returns ``2*e1 - e2``, which cancels most of the
tracking lag of a single EMA.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ModelParams:
    """Flat float64 parameter vector with value semantics helpers."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite parameter values")
        self.values = v

    def __len__(self):
        return self.values.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy())


def _check_dims(a: ModelParams, b: ModelParams):
    if len(a) != len(b):
        raise ValueError(
            f"parameter dimension mismatch: {len(a)} vs {len(b)}")


def ema_step(prev_teacher: ModelParams, student: ModelParams,
             alpha: float, raw_alpha: bool = False) -> ModelParams:
    """One exponential-moving-average step toward the student.

    Default decay is ``alpha**2`` (the printed form); ``raw_alpha`` uses
    ``alpha`` directly.
    """
    _check_dims(prev_teacher, student)
    d = alpha if raw_alpha else alpha * alpha
    return ModelParams(d * prev_teacher.values + (1.0 - d) * student.values)


@dataclass
class DemaState:
    """DEMA accumulators; initialize both to the starting teacher weights
    so that a student equal to the teacher is a fixed point."""

    alpha: float = 0.999
    e1: ModelParams = field(default=None)
    e2: ModelParams = field(default=None)
    raw_alpha: bool = False

    def __post_init__(self):
        if not (0 <= self.alpha < 1):
            raise ValueError("alpha must lie in [0, 1)")
        if self.e1 is None or self.e2 is None:
            raise ValueError("accumulators must be initialized")
        _check_dims(self.e1, self.e2)

    @classmethod
    def from_teacher(cls, teacher: ModelParams, alpha: float = 0.999,
                     raw_alpha: bool = False) -> "DemaState":
        return cls(alpha=alpha, e1=teacher.copy(), e2=teacher.copy(),
                   raw_alpha=raw_alpha)

    @property
    def decay(self) -> float:
        return self.alpha if self.raw_alpha else self.alpha * self.alpha


def dema_step(state: DemaState, student: ModelParams) -> ModelParams:
    """One double-EMA step; mutates the accumulators in ``state``.

    ``e1`` tracks the student, ``e2`` tracks ``e1``; the returned teacher
    is ``2*e1 - e2``.
    """
    _check_dims(state.e1, student)
    d = state.decay
    e1 = d * state.e1.values + (1.0 - d) * student.values
    e2 = d * state.e2.values + (1.0 - d) * e1
    state.e1 = ModelParams(e1)
    state.e2 = ModelParams(e2)
    return ModelParams(2.0 * e1 - e2)


def deep_copy(student: ModelParams) -> ModelParams:
    """Value copy of the student parameters."""
    return student.copy()
