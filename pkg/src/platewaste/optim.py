"""Adam and AdamW updates plus the tiered learning-rate schedule.

Both optimizers keep bias-corrected first/second moment estimates. Adam
folds L2 regularization into the gradient before the moment updates
("coupled"); AdamW shrinks the parameters multiplicatively and keeps the
moments computed from the raw gradient ("decoupled"). With weight decay
zero the two are bit-identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


class _AdamBase:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _moment_update(self, key: str, grad: np.ndarray) -> np.ndarray:
        """Advance the moments for one tensor and return the Adam step direction."""
        if key not in self.m:
            self.m[key] = np.zeros_like(grad)
            self.v[key] = np.zeros_like(grad)
        m = self.m[key]
        v = self.v[key]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}

    def _check(self, params, grads):
        for key, p in params.items():
            g = grads.get(key)
            if g is None or g.shape != p.shape:
                raise ShapeMismatch(f"gradient missing or mis-shaped for parameter {key!r}")


class Adam(_AdamBase):
    """Adam with optional L2 regularization coupled into the gradient."""

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self._check(params, grads)
        self.t += 1
        for key in params:
            grad = grads[key]
            if self.weight_decay != 0.0:
                grad = grad + self.weight_decay * params[key]
            params[key] -= self.lr * self._moment_update(key, grad)


class AdamW(_AdamBase):
    """Adam with decoupled multiplicative weight decay."""

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self._check(params, grads)
        self.t += 1
        for key in params:
            grad = grads[key]
            if self.weight_decay != 0.0:
                params[key] *= 1.0 - self.lr * self.weight_decay
            params[key] -= self.lr * self._moment_update(key, grad)


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant tiers of (start_epoch, lr), non-increasing in lr."""

    tiers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        tiers = tuple((int(e), float(lr)) for e, lr in self.tiers)
        if not tiers or tiers[0][0] != 0:
            raise ValueError("schedule must start with a tier at epoch 0")
        epochs = [e for e, _ in tiers]
        lrs = [lr for _, lr in tiers]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("tier start epochs must be strictly increasing")
        if any(lr <= 0 for lr in lrs):
            raise ValueError("learning rates must be positive")
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ValueError("learning rates must be non-increasing")
        object.__setattr__(self, "tiers", tiers)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate of the last tier whose start epoch is <= epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    current = schedule.tiers[0][1]
    for start, lr in schedule.tiers:
        if start <= epoch:
            current = lr
        else:
            break
    return current


DEFAULT_TIER_LRS = (1e-3, 5e-4, 1e-4, 5e-5, 1e-5)


def default_schedule(total_epochs: int) -> LrSchedule:
    """Five tiers spanning 1e-3 down to 1e-5 at equal fractions of the budget."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    starts, seen = [], set()
    for i, lr in enumerate(DEFAULT_TIER_LRS):
        e = (i * total_epochs) // len(DEFAULT_TIER_LRS)
        if e not in seen:
            seen.add(e)
            starts.append((e, lr))
    return LrSchedule(tuple(starts))
