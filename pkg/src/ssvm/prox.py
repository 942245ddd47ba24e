"""Margin losses, their closed-form proximal maps, and soft thresholding.

All functions accept scalars or arrays and broadcast elementwise.  The prox
of a loss ``l`` with step ``tau`` is ``argmin_u tau*l(u) + (u - t)**2 / 2``.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import K
from .exceptions import DomainError

_CODES = {"hinge": _kernels.HINGE, "tls": _kernels.TRUNCATED_LS, "huber": _kernels.HUBER}
_ALIASES = {
    "hinge": "hinge",
    "tls": "tls",
    "truncated_least_squares": "tls",
    "huber": "huber",
    "huberized_hinge": "huber",
}


@dataclass(frozen=True)
class LossKind:
    """A margin loss: ``'hinge'``, ``'tls'`` (truncated least squares) or
    ``'huber'`` (huberized hinge, with knee width ``delta``)."""

    name: str = "hinge"
    delta: float = 0.5

    def __post_init__(self):
        name = _ALIASES.get(self.name)
        if name is None:
            raise DomainError(f"unknown loss {self.name!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "delta", float(self.delta))
        if name == "huber" and not self.delta > 0:
            raise DomainError(f"huberized hinge needs delta > 0, got {self.delta}")

    @property
    def code(self):
        return _CODES[self.name]

    @classmethod
    def parse(cls, text):
        """Parse ``'hinge'``, ``'tls'`` or ``'huber:0.5'``."""
        if isinstance(text, LossKind):
            return text
        name, _, arg = str(text).partition(":")
        if arg:
            if _ALIASES.get(name) != "huber":
                raise DomainError(f"only the huberized hinge takes a parameter, got {text!r}")
            try:
                return cls("huber", float(arg))
            except ValueError:
                raise DomainError(f"bad huber width in {text!r}") from None
        return cls(name)

    def __str__(self):
        return f"huber:{self.delta!r}" if self.name == "huber" else self.name


HINGE = LossKind("hinge")


def loss_value(kind, t):
    t = np.asarray(t, dtype=np.float64)
    slack = np.maximum(0.0, 1.0 - t)
    if kind.name == "hinge":
        out = slack
    elif kind.name == "tls":
        out = slack ** 2
    else:
        dl = kind.delta
        out = np.where(t > 1.0, 0.0,
                       np.where(t >= 1.0 - dl, slack ** 2 / (2.0 * dl), 1.0 - t - dl / 2.0))
    return out[()] if out.ndim == 0 else out


def loss_subgradient(kind, t):
    """Subdifferential interval ``(lo, hi)`` of the loss at ``t``.

    Only the hinge has a kink (at ``t == 1``, interval ``[-1, 0]``); the
    other two losses are differentiable so ``lo == hi``.
    """
    t = np.asarray(t, dtype=np.float64)
    if kind.name == "hinge":
        lo = np.where(t > 1.0, 0.0, -1.0)
        hi = np.where(t < 1.0, -1.0, 0.0)
    elif kind.name == "tls":
        lo = hi = -2.0 * np.maximum(0.0, 1.0 - t)
    else:
        dl = kind.delta
        lo = hi = np.where(t > 1.0, 0.0, np.where(t >= 1.0 - dl, (t - 1.0) / dl, -1.0))
    return lo, hi


def loss_prox(kind, t, tau):
    """Closed-form ``prox_{tau * loss}(t)``."""
    if not tau > 0:
        raise DomainError(f"prox step must be positive, got {tau!r}")
    t = np.asarray(t, dtype=np.float64)
    out = K["loss_prox"](kind.code, t, float(tau), kind.delta)
    out = np.asarray(out)
    return out[()] if out.ndim == 0 else out


def soft_threshold(t, tau):
    """``sign(t) * max(|t| - tau, 0)``, the prox of ``tau * |.|``."""
    if tau < 0:
        raise DomainError(f"threshold must be non-negative, got {tau!r}")
    t = np.asarray(t, dtype=np.float64)
    out = K["soft_threshold"](t.reshape(-1), float(tau)).reshape(t.shape)
    return out[()] if out.ndim == 0 else out
