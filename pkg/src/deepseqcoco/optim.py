"""Loss, optimizer updates and hybrid epoch schedules.

Both update rules work in place on the parameter tensors and skip any
tensor that does not require a gradient, so frozen weights stay
bit-identical no matter what is passed in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError, NumericError, SpecError
from .tensor import Tensor, record

PROB_FLOOR = 1e-12


def scce_loss(probs: Tensor, labels) -> Tensor:
    """Sparse categorical cross-entropy: batch mean of ``-log p[i, label_i]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DataError(f"scce_loss: probs {probs.shape} and labels {labels.shape} disagree")
    n, k = probs.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"scce_loss: labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    rows = np.arange(n)
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = np.asarray(-np.log(clamped).mean(), dtype=probs.dtype)

    def backward(g):
        gp = np.zeros_like(probs.data)
        gp[rows, labels] = np.where(picked >= PROB_FLOOR, -g / (n * clamped), 0.0)
        return (gp,)

    return record("scce_loss", loss, (probs,), backward)


@dataclass
class SgdState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: list = field(default_factory=list)

    kind = "sgd"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise SpecError("SGD learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise SpecError("SGD momentum must lie in [0, 1)")


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)  # first moments
    v: list = field(default_factory=list)  # second moments

    kind = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise SpecError("Adam learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise SpecError("Adam decay rates must lie in [0, 1)")
        if self.eps <= 0:
            raise SpecError("Adam eps must be positive")


OptimizerState = Union[SgdState, AdamState]


def _checked(params: Sequence[Tensor], grads) -> list:
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise SpecError(f"{len(params)} parameters but {len(grads)} gradients")
    out = []
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=p.data.dtype)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
        out.append(g)
    return out


def sgd_step(state: SgdState, params: Sequence[Tensor], grads: Optional[Sequence] = None) -> Sequence[Tensor]:
    """``v <- momentum * v + g``; ``param <- param - lr * v``.  With zero momentum this is plain SGD."""
    grads = _checked(params, grads)
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    lr, mu = state.learning_rate, state.momentum
    for p, g, v in zip(params, grads, state.velocity):
        if not p.requires_grad:
            continue
        if mu:
            v *= mu
            v += g
            p.data -= lr * v
        else:
            v[...] = g
            p.data -= lr * g
    return params


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Optional[Sequence] = None) -> Sequence[Tensor]:
    """One bias-corrected Adam update."""
    grads = _checked(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not p.requires_grad:
            continue
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def step(state: OptimizerState, params: Sequence[Tensor], grads=None) -> Sequence[Tensor]:
    if isinstance(state, AdamState):
        return adam_step(state, params, grads)
    return sgd_step(state, params, grads)


# --- schedules ---------------------------------------------------------------

_STATE_TYPES = {"adam": AdamState, "sgd": SgdState}
_HYPER_KEYS = {
    "adam": {"learning_rate", "beta1", "beta2", "eps"},
    "sgd": {"learning_rate", "momentum"},
}


@dataclass(frozen=True)
class Segment:
    optimizer: str
    epochs: int
    hyperparams: tuple = ()  # sorted (key, value) pairs

    def __post_init__(self):
        if self.optimizer not in _STATE_TYPES:
            raise SpecError(f"unknown optimizer {self.optimizer!r}; use 'adam' or 'sgd'")
        if self.epochs < 1:
            raise SpecError(f"segment epochs must be >= 1, got {self.epochs}")
        bad = {k for k, _ in self.hyperparams} - _HYPER_KEYS[self.optimizer]
        if bad:
            raise SpecError(f"unknown {self.optimizer} hyperparameters: {sorted(bad)}")

    def new_state(self) -> OptimizerState:
        return _STATE_TYPES[self.optimizer](**dict(self.hyperparams))

    def to_dict(self) -> dict:
        return {"optimizer": self.optimizer, "epochs": self.epochs, **dict(self.hyperparams)}


@dataclass(frozen=True)
class Schedule:
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise SpecError("schedule must contain at least one segment")

    @classmethod
    def of(cls, *pairs) -> "Schedule":
        """``Schedule.of(("adam", 3), ("sgd", 2))``."""
        return cls(tuple(Segment(kind, epochs) for kind, epochs in pairs))

    @classmethod
    def from_list(cls, items) -> "Schedule":
        segments = []
        for item in items:
            item = dict(item)
            try:
                kind = item.pop("optimizer")
                epochs = int(item.pop("epochs"))
            except KeyError as exc:
                raise SpecError(f"schedule segment missing key {exc}") from None
            segments.append(Segment(kind, epochs, tuple(sorted(item.items()))))
        return cls(tuple(segments))

    def to_list(self) -> list:
        return [s.to_dict() for s in self.segments]

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.segments)

    def segment_index(self, epoch: int) -> int:
        """Index of the segment covering 1-based ``epoch``."""
        if not 1 <= epoch <= self.total_epochs:
            raise SpecError(f"epoch {epoch} outside schedule of {self.total_epochs} epochs")
        end = 0
        for idx, seg in enumerate(self.segments):
            end += seg.epochs
            if epoch <= end:
                return idx
        raise AssertionError("unreachable")

    def label(self) -> str:
        return "->".join(f"{s.optimizer}x{s.epochs}" for s in self.segments)


def run_schedule(schedule: Schedule) -> list[tuple[int, str, bool]]:
    """Per-epoch assignment ``(epoch, optimizer, starts_new_segment)``, epochs 1-based.

    A new segment means a fresh, zeroed optimizer state while parameters
    carry over unchanged.
    """
    plan = []
    prev = None
    for epoch in range(1, schedule.total_epochs + 1):
        idx = schedule.segment_index(epoch)
        plan.append((epoch, schedule.segments[idx].optimizer, idx != prev))
        prev = idx
    return plan
