"""Closed-form noise predictors for analytically known target distributions.

For a target x_0 ~ N(m, s^2 I) the forward process x_t = a x_0 + sqrt(1-a^2) e
gives the marginal N(a m, v I) with v = a^2 s^2 + 1 - a^2, whose minimum-MSE
noise prediction is

    eps(x_t) = sqrt(1 - a^2) (x_t - a m) / v.

Mixtures combine per-component predictions with posterior responsibilities.
These stand in for a trained network, so every guidance quantity downstream
can be checked against exact values.  Each denoiser also exposes the exact
vector-Jacobian product of its prediction, which the noisy-guidance pullback
needs.

All predictors accept states of shape (..., N, D) where D = 3 + d stacks the
position block (first three columns) and the feature block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geomstate import COG_TOL, PointState
from .schedule import NoiseSchedule

_WEIGHT_TOL = 1e-12


class Denoiser:
    """Interface: ``predict`` the noise and its exact vjp at a state."""

    def predict(self, z: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError

    def predict_vjp(self, z: np.ndarray, t: int, sched: NoiseSchedule, cotangent: np.ndarray) -> np.ndarray:
        """Return cotangent^T @ (d eps / d z), evaluated at z."""
        raise NotImplementedError


class ZeroDenoiser(Denoiser):
    """Predicts zero noise everywhere (reverse process is pure rescaling)."""

    def predict(self, z, t, sched):
        sched._check_step(t)
        return np.zeros_like(np.asarray(z, dtype=np.float64))

    def predict_vjp(self, z, t, sched, cotangent):
        sched._check_step(t)
        return np.zeros_like(np.asarray(cotangent, dtype=np.float64))


def _validate_mean(mean: np.ndarray, cog_constrained: bool) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim != 2 or mean.shape[1] < 3 or mean.shape[0] < 1:
        raise ValueError("mean state must have shape (N, 3 + d) with N >= 1")
    if not np.all(np.isfinite(mean)):
        raise ValueError("mean state contains non-finite values")
    if cog_constrained and np.abs(mean[:, :3].mean(axis=0)).max() > COG_TOL:
        raise ValueError("mean state positions violate zero centre of gravity")
    mean = mean.copy()
    mean.flags.writeable = False
    return mean


@dataclass(frozen=True)
class GaussianDenoiser(Denoiser):
    """Exact denoiser for a single isotropic Gaussian target N(mean, scale^2 I)."""

    mean: np.ndarray  # (N, 3 + d)
    scale: float
    cog_constrained: bool = True

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be non-negative")
        object.__setattr__(self, "mean", _validate_mean(self.mean, self.cog_constrained))
        object.__setattr__(self, "scale", float(self.scale))

    def _coeff(self, t: int, sched: NoiseSchedule) -> tuple[float, float]:
        a = sched.alpha(t)
        v = a * a * self.scale ** 2 + 1.0 - a * a
        return a, np.sqrt(1.0 - a * a) / v

    def predict(self, z, t, sched):
        z = np.asarray(z, dtype=np.float64)
        a, c = self._coeff(t, sched)
        return c * (z - a * self.mean)

    def predict_vjp(self, z, t, sched, cotangent):
        _, c = self._coeff(t, sched)
        return c * np.asarray(cotangent, dtype=np.float64)


@dataclass(frozen=True)
class MixtureDenoiser(Denoiser):
    """Exact denoiser for a finite isotropic Gaussian mixture target.

    The prediction is the responsibility-weighted combination of the
    per-component predictions; responsibilities are evaluated in log space
    with max subtraction so small-t evaluations do not underflow.
    """

    weights: np.ndarray          # (K,)
    means: tuple                 # K arrays of shape (N, 3 + d)
    scales: np.ndarray           # (K,)
    cog_constrained: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        s = np.asarray(self.scales, dtype=np.float64)
        means = tuple(_validate_mean(m, self.cog_constrained) for m in self.means)
        if w.ndim != 1 or w.size < 1 or len(means) != w.size or s.shape != w.shape:
            raise ValueError("weights, means, scales must have matching length K >= 1")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("mixture weights must sum to 1")
        if np.any(s < 0):
            raise ValueError("mixture scales must be non-negative")
        shape = means[0].shape
        if any(m.shape != shape for m in means):
            raise ValueError("all component means must share one shape")
        w = w.copy()
        w.flags.writeable = False
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "means", means)

    def _component_terms(self, z: np.ndarray, t: int, sched: NoiseSchedule):
        """Responsibilities r_k, scores g_k = -(z - a m_k)/v_k, coefficients c_k."""
        z = np.asarray(z, dtype=np.float64)
        a = sched.alpha(t)
        root = np.sqrt(1.0 - a * a)
        dim = z.shape[-1] * z.shape[-2]
        diffs, logw, cs, vs = [], [], [], []
        for w, m, s in zip(self.weights, self.means, self.scales):
            v = a * a * s * s + 1.0 - a * a
            diff = z - a * m
            sq = np.sum(diff * diff, axis=(-2, -1))
            logw.append(np.log(w) - 0.5 * sq / v - 0.5 * dim * np.log(v))
            diffs.append(diff)
            cs.append(root / v)
            vs.append(v)
        log_r = np.stack(logw, axis=0)                      # (K, ...)
        log_r = log_r - log_r.max(axis=0, keepdims=True)
        r = np.exp(log_r)
        r = r / r.sum(axis=0, keepdims=True)
        return r, diffs, np.array(cs), np.array(vs)

    def predict(self, z, t, sched):
        z = np.asarray(z, dtype=np.float64)
        r, diffs, cs, vs = self._component_terms(z, t, sched)
        out = np.zeros_like(z)
        for k, diff in enumerate(diffs):
            out += r[k][..., None, None] * cs[k] * diff
        return out

    def predict_vjp(self, z, t, sched, cotangent):
        """Exact vjp including the responsibility-gradient terms.

        With eps = sum_k r_k eps_k, eps_k = c_k (z - a m_k) and
        grad a_k = -(z - a m_k)/v_k,

            v^T J = (sum_k r_k c_k) v + sum_k r_k b_k g_k - (sum_k r_k b_k) gbar,

        where b_k = <v, eps_k> and gbar = sum_k r_k g_k.
        """
        z = np.asarray(z, dtype=np.float64)
        cot = np.asarray(cotangent, dtype=np.float64)
        r, diffs, cs, vs = self._component_terms(z, t, sched)
        c_mix = np.zeros(z.shape[:-2])
        gbar = np.zeros_like(z)
        rb_sum = np.zeros(z.shape[:-2])
        correction = np.zeros_like(z)
        for k, diff in enumerate(diffs):
            g_k = -diff / vs[k]
            b_k = np.sum(cot * cs[k] * diff, axis=(-2, -1))
            rk = r[k]
            c_mix = c_mix + rk * cs[k]
            gbar = gbar + rk[..., None, None] * g_k
            rb_sum = rb_sum + rk * b_k
            correction = correction + (rk * b_k)[..., None, None] * g_k
        return c_mix[..., None, None] * cot + correction - rb_sum[..., None, None] * gbar


def predict_noise(denoiser: Denoiser, state: PointState, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Noise prediction for a PointState, returned as an (N, 3 + d) array."""
    return denoiser.predict(state.as_array(), t, sched)


class Decoder:
    """Pluggable latent -> data map standing in for a trained decoder."""

    def decode(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, z: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityDecoder(Decoder):
    def decode(self, z):
        return np.asarray(z, dtype=np.float64)

    def vjp(self, z, cotangent):
        return np.asarray(cotangent, dtype=np.float64)


@dataclass(frozen=True)
class AffineDecoder(Decoder):
    """Elementwise affine toy decoder a*z + b for composition-order tests."""

    gain: float = 1.0
    shift: float = 0.0

    def decode(self, z):
        return self.gain * np.asarray(z, dtype=np.float64) + self.shift

    def vjp(self, z, cotangent):
        return self.gain * np.asarray(cotangent, dtype=np.float64)
