"""Forward diffusion with the shared-distribution term and its reverse samplers.

Images are plain numpy arrays, ``(C, H, W)`` or batched ``(N, C, H, W)``.  A
timestep argument may be an int or, for batches, an int array of shape ``(N,)``
(one timestep per sample).

Throughout, ``Iin`` is the *explicit* condition that enters the process algebra.
The ablation without explicit condition passes zeros here while the denoiser
still receives the real degraded image.
"""
from __future__ import annotations

import os
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, TimestepError
from .schedule import ScheduleTable, subsequence

# NaN/Inf guard on every output; enabled in the test suite via conftest
CHECK_FINITE = os.environ.get("DIFFUIR_DEBUG", "") == "1"

Denoiser = Callable[[np.ndarray, np.ndarray, "int | np.ndarray"], np.ndarray]


def _checked(x):
    if CHECK_FINITE and not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite values in diffusion output")
    return x


def _same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise DimensionError(f"shape mismatch: {shape} vs {np.shape(a)}")


def _coef(table_arr, t, like):
    """Look up coefficient(s) at ``t`` and broadcast against ``like``."""
    if np.ndim(t) == 0:
        return table_arr[int(t)]
    c = table_arr[np.asarray(t, dtype=np.intp)]
    like = np.asarray(like)
    if c.shape[0] != like.shape[0]:
        raise DimensionError(f"{c.shape[0]} timesteps for a batch of {like.shape[0]}")
    return c.reshape((-1,) + (1,) * (like.ndim - 1))


def forward_closed_form(sched: ScheduleTable, I0, Iin, eps, t):
    """Jump straight to step ``t``: I0 + abar_t*(Iin - I0) + bbar_t*eps - dbar_t*Iin."""
    _same_shape(I0, Iin, eps)
    sched.check_t(t)
    Ires = Iin - I0
    return _checked(I0 + _coef(sched.alpha_bar, t, I0) * Ires
                    + _coef(sched.beta_bar, t, I0) * eps
                    - _coef(sched.delta_bar, t, I0) * Iin)


def forward_one_step(sched: ScheduleTable, I_prev, Ires, Iin, eps_step, t):
    """One Markov step ``t-1 -> t`` of the forward chain."""
    _same_shape(I_prev, Ires, Iin, eps_step)
    sched.check_t(t)
    return _checked(I_prev + _coef(sched.alpha, t, I_prev) * Ires
                    + _coef(sched.beta, t, I_prev) * eps_step
                    - _coef(sched.delta, t, I_prev) * Iin)


def sample_endpoint(sched: ScheduleTable, Iin, eps):
    """Diffusing endpoint ``(1 - dbar_T) Iin + bbar_T eps``."""
    _same_shape(Iin, eps)
    T = sched.T
    return _checked((1.0 - sched.delta_bar[T]) * Iin + sched.beta_bar[T] * eps)


def predict_eps_from_residual(sched: ScheduleTable, It, Iin, Ires_pred, t):
    """Noise implied by a residual prediction (forward closed form solved for eps)."""
    _same_shape(It, Iin, Ires_pred)
    if np.any(np.asarray(t) == 0):
        raise DomainError("eps is undefined at t=0 (beta_bar_0 = 0)")
    sched.check_t(t)
    return _checked((It - (1.0 - _coef(sched.delta_bar, t, It)) * Iin
                     + (1.0 - _coef(sched.alpha_bar, t, It)) * Ires_pred)
                    / _coef(sched.beta_bar, t, It))


def posterior_mean(sched: ScheduleTable, It, Iin, Ires_pred, t, t_lo=None):
    """Mean of q(I_{t_lo} | I_t, ...) with I0 and eps taken from the residual prediction."""
    t_lo = t - 1 if t_lo is None else t_lo
    _check_pair(sched, t, t_lo)
    eps = predict_eps_from_residual(sched, It, Iin, Ires_pred, t)
    dvar = sched.beta_bar_sq[t] - sched.beta_bar_sq[t_lo]
    return (It - (sched.alpha_bar[t] - sched.alpha_bar[t_lo]) * Ires_pred
            + (sched.delta_bar[t] - sched.delta_bar[t_lo]) * Iin
            - dvar / sched.beta_bar[t] * eps)


def posterior_variance(sched: ScheduleTable, t, t_lo=None):
    """beta_t^2 * bbar_{t-1}^2 / bbar_t^2, generalised to a skip ``t -> t_lo``."""
    t_lo = t - 1 if t_lo is None else t_lo
    _check_pair(sched, t, t_lo)
    dvar = sched.beta_bar_sq[t] - sched.beta_bar_sq[t_lo]
    return dvar * sched.beta_bar_sq[t_lo] / sched.beta_bar_sq[t]


def ddpm_step(sched: ScheduleTable, It, Iin, Ires_pred, t, noise, t_lo=None):
    """Stochastic ancestral step; ``noise=0`` returns the posterior mean exactly."""
    _same_shape(It, Iin, Ires_pred, noise)
    mean = posterior_mean(sched, It, Iin, Ires_pred, t, t_lo)
    std = np.sqrt(posterior_variance(sched, t, t_lo))
    return _checked(mean + std * noise)


def ddim_step(sched: ScheduleTable, It, Iin, Ires_pred, t_hi, t_lo):
    """Deterministic step ``t_hi -> t_lo``; no noise terms."""
    _same_shape(It, Iin, Ires_pred)
    _check_pair(sched, t_hi, t_lo)
    return _checked(It - (sched.alpha_bar[t_hi] - sched.alpha_bar[t_lo]) * Ires_pred
                    + (sched.delta_bar[t_hi] - sched.delta_bar[t_lo]) * Iin)


def _check_pair(sched, t_hi, t_lo):
    if not (0 <= t_lo < t_hi <= sched.T):
        raise TimestepError(f"need 0 <= t_lo < t_hi <= {sched.T}, got t_hi={t_hi}, t_lo={t_lo}")


def sample(sched: ScheduleTable, denoiser: Denoiser, Iin, S: int = 3, rng_seed: int = 0,
           sampler: str = "ddim", *, eps=None, explicit_condition: bool = True,
           clamp: bool = True, return_trajectory: bool = False):
    """Restore ``Iin`` by running the reverse process over ``S`` evenly spaced steps.

    ``denoiser(I_t, Iin, t)`` must return a residual prediction shaped like
    ``I_t``.  The last step is always the direct ``C - R(I_t, Iin, t)``, with
    ``C`` the explicit condition (``Iin``, or zeros when ``explicit_condition``
    is off), so the output carries no injected noise.
    """
    if sampler not in ("ddim", "ddpm"):
        raise ConfigError(f"sampler: expected 'ddim' or 'ddpm', got {sampler!r}")
    Iin = np.asarray(Iin)
    ts = subsequence(sched, S)
    rng = np.random.default_rng(rng_seed)
    if eps is None:
        eps = rng.standard_normal(Iin.shape).astype(Iin.dtype, copy=False)
    cond = Iin if explicit_condition else np.zeros_like(Iin)
    x = sample_endpoint(sched, cond, eps)
    traj = [(ts[0], x)]
    for t_hi, t_lo in zip(ts[:-1], ts[1:]):
        batch_t = t_hi if Iin.ndim < 4 else np.full(Iin.shape[0], t_hi)
        res = np.asarray(denoiser(x, Iin, batch_t))
        if res.shape != x.shape:
            raise DimensionError(f"denoiser returned {res.shape}, expected {x.shape}")
        if t_lo == 0:
            x = _checked(cond - res)
        elif sampler == "ddim":
            x = ddim_step(sched, x, cond, res, t_hi, t_lo)
        else:
            noise = rng.standard_normal(x.shape).astype(x.dtype, copy=False)
            x = ddpm_step(sched, x, cond, res, t_hi, noise, t_lo)
        traj.append((t_lo, x))
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return (x, traj) if return_trajectory else x
