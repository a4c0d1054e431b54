"""Diffusion-time tables and the elementary forward/reverse maps.

Steps are 1-based, t = 1..T.  ``alphas[t]`` holds the cumulative signal
coefficient sqrt(prod_{i<=t} (1 - beta_i)) with ``alphas[0] = 1``;
``sigmas[t-1]`` holds the posterior noise scale for the t -> t-1 step,

    sigma_t = sqrt((1 - alpha_{t-1}^2) / (1 - alpha_t^2) * beta_t),

so ``sigma_1 = 0`` and the final denoising step is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("constant", "linear", "polynomial")

_ALPHA_RECURSION_TOL = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/sigma tables for a T-step diffusion."""

    betas: np.ndarray   # (T,)   betas[t-1]  = beta_t
    alphas: np.ndarray  # (T+1,) alphas[t]   = alpha_t, alphas[0] = 1
    sigmas: np.ndarray  # (T,)   sigmas[t-1] = sigma_t, sigmas[0] = 0

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        alphas = np.asarray(self.alphas, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-d sequence")
        T = betas.size
        if alphas.shape != (T + 1,) or sigmas.shape != (T,):
            raise ValueError("alphas must have length T+1 and sigmas length T")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if alphas[0] != 1.0 or alphas[-1] <= 0.0:
            raise ValueError("alphas must start at 1 and stay positive")
        if np.any(np.diff(alphas) >= 0.0):
            raise ValueError("alphas must be strictly decreasing")
        recursion = alphas[1:] ** 2 - (1.0 - betas) * alphas[:-1] ** 2
        if np.max(np.abs(recursion)) > _ALPHA_RECURSION_TOL:
            raise ValueError("alpha_t^2 != (1 - beta_t) * alpha_{t-1}^2")
        if sigmas[0] != 0.0 or np.any(sigmas < 0.0):
            raise ValueError("sigmas must be non-negative with sigma_1 = 0")
        for name, arr in (("betas", betas), ("alphas", alphas), ("sigmas", sigmas)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def total_steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        """alpha_t for t in 0..T (alpha_0 = 1)."""
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"step t={t} out of range [0, {self.total_steps}]")
        return float(self.alphas[t])

    def sigma(self, t: int) -> float:
        self._check_step(t)
        return float(self.sigmas[t - 1])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"step t={t} out of range [1, {self.total_steps}]")


def build_schedule(
    kind: str = "linear",
    total_steps: int = 1000,
    *,
    beta: float | None = None,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    power: float = 2.0,
) -> NoiseSchedule:
    """Construct a variance schedule of the given kind.

    ``constant`` uses a single ``beta`` for all steps; ``linear``
    interpolates beta_start..beta_end; ``polynomial`` interpolates
    beta^(1/power) linearly (power=2 is the quadratic schedule).
    Deterministic: identical inputs give byte-identical tables.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if kind == "constant":
        if beta is None:
            raise ValueError("constant schedule requires beta")
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        betas = np.full(total_steps, float(beta))
    elif kind in ("linear", "polynomial"):
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        if kind == "linear":
            betas = np.linspace(beta_start, beta_end, total_steps)
        else:
            if power <= 0:
                raise ValueError("power must be positive")
            root = np.linspace(beta_start ** (1.0 / power), beta_end ** (1.0 / power), total_steps)
            betas = root ** power
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")

    alpha_sq = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    alphas = np.sqrt(alpha_sq)
    sigmas = np.sqrt((1.0 - alpha_sq[:-1]) / (1.0 - alpha_sq[1:]) * betas)
    sigmas[0] = 0.0  # alpha_0 = 1 forces the numerator to zero exactly
    return NoiseSchedule(betas=betas, alphas=alphas, sigmas=sigmas)


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("input tensor contains non-finite values")
    return arr


def forward_diffuse(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = alpha_t * x_0 + sqrt(1 - alpha_t^2) * eps."""
    sched._check_step(t)
    x0 = _as_array(x0)
    eps = _as_array(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    a = sched.alpha(t)
    return a * x0 + np.sqrt(1.0 - a * a) * eps


def posterior_mean(xt, eps_pred, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Reverse-step mean (1/sqrt(1-beta_t)) (x_t - beta_t/sqrt(1-alpha_t^2) eps)."""
    sched._check_step(t)
    xt = _as_array(xt)
    eps_pred = _as_array(eps_pred)
    if xt.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: xt {xt.shape} vs eps_pred {eps_pred.shape}")
    b = sched.beta(t)
    a = sched.alpha(t)
    return (xt - b / np.sqrt(1.0 - a * a) * eps_pred) / np.sqrt(1.0 - b)


def t0_estimate(xt, eps_pred, t: int, sched: NoiseSchedule) -> np.ndarray:
    """One-step denoised estimate (x_t - sqrt(1-alpha_t^2) eps) / alpha_t."""
    sched._check_step(t)
    xt = _as_array(xt)
    eps_pred = _as_array(eps_pred)
    if xt.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: xt {xt.shape} vs eps_pred {eps_pred.shape}")
    a = sched.alpha(t)
    return (xt - np.sqrt(1.0 - a * a) * eps_pred) / a
