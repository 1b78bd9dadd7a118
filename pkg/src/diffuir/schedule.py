"""Coefficient schedules for the residual + shared-distribution diffusion.

All per-step arrays are stored with a leading zero so that ``table.alpha[t]``
is the coefficient of step ``t`` (``t = 1..T``) and ``table.alpha_bar[t]`` the
running sum up to ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigError, TimestepError

SHAPES = ("linear-increasing", "constant")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScheduleTable:
    T: int
    alpha: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    delta_bar: np.ndarray
    beta_bar_sq: np.ndarray
    delta_bar_T_target: float
    shape: str = "linear-increasing"

    @classmethod
    def from_steps(cls, alpha, beta, delta, delta_bar_T_target=None, shape="custom"):
        """Build a table from per-step coefficients ``[1..T]`` (no leading zero)."""
        alpha = np.asarray(alpha, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        delta = np.asarray(delta, dtype=np.float64)
        if not (alpha.shape == beta.shape == delta.shape) or alpha.ndim != 1:
            raise ConfigError("alpha, beta, delta must be 1-D arrays of equal length")
        T = alpha.size
        if T < 1:
            raise ConfigError("T: need at least one step")
        pad = lambda a: np.concatenate([[0.0], a])  # noqa: E731
        alpha, beta, delta = pad(alpha), pad(beta), pad(delta)
        beta_bar_sq = np.cumsum(beta**2)
        delta_bar = np.cumsum(delta)
        if delta_bar_T_target is None:
            delta_bar_T_target = float(delta_bar[-1])
        return cls(
            T=T,
            alpha=_frozen(alpha),
            beta=_frozen(beta),
            delta=_frozen(delta),
            alpha_bar=_frozen(np.cumsum(alpha)),
            beta_bar=_frozen(np.sqrt(beta_bar_sq)),
            delta_bar=_frozen(delta_bar),
            beta_bar_sq=_frozen(beta_bar_sq),
            delta_bar_T_target=float(delta_bar_T_target),
            shape=shape,
        )

    def check_t(self, t, lo=1):
        ts = np.asarray(t)
        if ts.size and (ts.min() < lo or ts.max() > self.T):
            raise TimestepError(f"t={t} outside [{lo}, {self.T}]")

    def rows(self):
        """Yield ``(t, alpha, beta, delta, alpha_bar, beta_bar, delta_bar)`` for t = 0..T."""
        for t in range(self.T + 1):
            yield (t, self.alpha[t], self.beta[t], self.delta[t],
                   self.alpha_bar[t], self.beta_bar[t], self.delta_bar[t])


def build_schedule(T: int = 50, delta_bar_T: float = 0.9, beta_bar_T: float = 1.0,
                   shape: str = "linear-increasing") -> ScheduleTable:
    """Per-step coefficients whose cumulative sums hit the requested endpoints.

    ``linear-increasing``: alpha_t = 2t / (T(T+1)).  ``constant``: alpha_t = 1/T.
    In both, delta_t = delta_bar_T * alpha_t and beta_t^2 = beta_bar_T^2 / T.
    """
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError(f"T: must be a positive integer, got {T!r}")
    if not (0.0 <= delta_bar_T <= 1.0) or math.isnan(delta_bar_T):
        raise ConfigError(f"delta_bar_T: must lie in [0, 1], got {delta_bar_T!r}")
    if not beta_bar_T > 0.0 or not math.isfinite(beta_bar_T):
        raise ConfigError(f"beta_bar_T: must be positive, got {beta_bar_T!r}")
    if shape not in SHAPES:
        raise ConfigError(f"shape: expected one of {SHAPES}, got {shape!r}")
    T = int(T)
    steps = np.arange(1, T + 1, dtype=np.float64)
    if shape == "linear-increasing":
        alpha = 2.0 * steps / (T * (T + 1))
    else:
        alpha = np.full(T, 1.0 / T)
    delta = delta_bar_T * alpha
    beta = np.full(T, beta_bar_T / math.sqrt(T))
    return ScheduleTable.from_steps(alpha, beta, delta, delta_bar_T, shape)


def with_delta_bar(table: ScheduleTable, delta_bar_T: float) -> ScheduleTable:
    """Same alpha/beta, delta rescaled to a new endpoint (delta proportional to alpha)."""
    if not 0.0 <= delta_bar_T <= 1.0:
        raise ConfigError(f"delta_bar_T: must lie in [0, 1], got {delta_bar_T!r}")
    alpha = table.alpha[1:]
    return ScheduleTable.from_steps(alpha, table.beta[1:], delta_bar_T * alpha / alpha.sum(),
                                    delta_bar_T, table.shape)


def subsequence(table_or_T, S: int) -> list[int]:
    """Evenly spaced sampling timesteps ``[T, ..., 0]`` (S + 1 entries)."""
    T = table_or_T.T if isinstance(table_or_T, ScheduleTable) else int(table_or_T)
    if isinstance(S, bool) or not isinstance(S, (int, np.integer)) or not 1 <= S <= T:
        raise ConfigError(f"steps: must lie in [1, {T}], got {S!r}")
    # round half up; Python's round() would send 2.5 -> 2
    return [int(math.floor(T * i / S + 0.5)) for i in range(S, -1, -1)]
