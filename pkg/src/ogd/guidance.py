"""Guidance gradients that steer the reverse diffusion process.

Three mechanisms:

* zeroth-order oracle guidance: a two-sided probe along a random matrix U
  estimates the directional derivative of a black-box objective, and the
  squared-loss chain rule 2 (y - F) turns it into a mean-shift gradient;
* noisy guidance: the property gradient at the one-step denoised estimate,
  pulled back exactly through the decoder and through the linear map
  d x0_hat / d x_t = (I - sqrt(1 - a^2) d eps/d x_t) / a;
* clean guidance: K gradient-descent steps on the denoised estimate, with
  the shift re-expressed as an augmented noise so the noisy state is
  reproduced exactly.

Every gradient returned here is positions-only; feature blocks are never
shifted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import Decoder, Denoiser, IdentityDecoder
from .geomstate import PointState, sample_perturbation
from .schedule import NoiseSchedule, t0_estimate

SCALARIZATIONS = ("rms", "mean-norm")


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs shared by all guidance mechanisms.

    ``scale`` multiplies the property/regressor-style shift (and, for the
    clean path, the descent step size so scale = 0 is an exact no-op);
    ``oracle_scale`` multiplies the oracle shift in the bilevel modes and
    defaults to ``scale`` when unset.  The mean shift uses the sigma of the
    step being sampled (the t -> t-1 sigma); the source algorithm is
    ambiguous between that and the following step's sigma.
    """

    scale: float = 0.0
    zeta: float = 1e-6
    window: int = 400
    skip: int = 1
    clean_steps: int = 1
    clean_lr: float = 0.01
    target: float = 0.0
    scalarization: str = "rms"
    oracle_scale: float | None = None
    oracle_target: float = 0.0
    probes: int = 1
    max_grad_norm: float | None = None
    center_perturbation: bool = True

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be non-negative")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.window < 0:
            raise ValueError("window must be non-negative")
        if self.skip < 1:
            raise ValueError("skip must be >= 1")
        if self.clean_steps < 1:
            raise ValueError("clean_steps must be >= 1")
        if self.clean_lr < 0:
            raise ValueError("clean_lr must be non-negative")
        if self.probes < 1:
            raise ValueError("probes must be >= 1")
        if self.scalarization not in SCALARIZATIONS:
            raise ValueError(f"scalarization must be one of {SCALARIZATIONS}")
        if self.oracle_scale is not None and self.oracle_scale < 0:
            raise ValueError("oracle_scale must be non-negative")

    @property
    def effective_oracle_scale(self) -> float:
        return self.scale if self.oracle_scale is None else self.oracle_scale


def is_guided_step(t: int, cfg: GuidanceConfig) -> bool:
    """Guidance fires every ``skip``-th step inside the window, anchored at the
    window's opening step; a skip longer than the window disables guidance
    entirely (so skip >= T reduces exactly to unguided sampling)."""
    return t <= cfg.window and cfg.skip <= cfg.window and (cfg.window - t) % cfg.skip == 0


def guided_steps(cfg: GuidanceConfig, total_steps: int) -> list[int]:
    return [t for t in range(total_steps, 0, -1) if is_guided_step(t, cfg)]


def cap_gradient_norm(grad: np.ndarray, cap: float | None) -> np.ndarray:
    if cap is None:
        return grad
    norm = np.linalg.norm(grad, axis=(-2, -1), keepdims=True)
    factor = np.where(norm > cap, cap / np.where(norm > 0, norm, 1.0), 1.0)
    return grad * factor


def spsa_estimate(positions, objective_batch, u, zeta: float):
    """Directional zeroth-order estimate d * U, batched.

    positions: (..., N, 3); u: (..., P, N, 3) probe perturbations.
    objective_batch maps stacked (..., N, 3) positions to (values, valid).
    Returns (estimate (..., N, 3), value at center (...,), all-valid (...,)).
    """
    pos = np.asarray(positions, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    f0, ok0 = objective_batch(pos)
    plus = pos[..., None, :, :] + zeta * u
    minus = pos[..., None, :, :] - zeta * u
    fp, okp = objective_batch(plus)
    fm, okm = objective_batch(minus)
    d = (fp - fm) / (2.0 * zeta)
    est = np.mean(d[..., None, None] * u, axis=-3)
    ok = ok0 & np.all(okp, axis=-1) & np.all(okm, axis=-1)
    return est, f0, ok


def spsa_oracle_gradient(
    state: PointState,
    objective,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mean-shift gradient 2 (y - F(x)) * (F(x+zU) - F(x-zU))/(2z) * U.

    ``objective`` maps a PointState to (scalar, valid).  The perturbation
    touches positions only; if any of the oracle calls reports invalid the
    gradient is all-zeros (oracle failures must never abort a chain).
    """
    n = state.n_atoms
    u = np.stack(
        [sample_perturbation(n, rng, center=cfg.center_perturbation) for _ in range(cfg.probes)]
    )

    def batch(positions):
        pos = np.asarray(positions, dtype=np.float64)
        flat = pos.reshape((-1, n, 3))
        vals = np.empty(flat.shape[0])
        ok = np.empty(flat.shape[0], dtype=bool)
        for idx, p in enumerate(flat):
            probe = PointState(p, state.features, cog_constrained=False)
            vals[idx], ok[idx] = objective(probe)
        return vals.reshape(pos.shape[:-2]), ok.reshape(pos.shape[:-2])

    est, f0, ok = spsa_estimate(state.positions, batch, u, cfg.zeta)
    if not ok:
        return np.zeros((n, 3))
    grad = 2.0 * (cfg.oracle_target - f0) * est
    return cap_gradient_norm(grad, cfg.max_grad_norm)


def noisy_gradient_batch(
    z,
    t: int,
    denoiser: Denoiser,
    decoder: Decoder,
    property_fn,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Batched noisy-guidance gradient for states of shape (..., N, 3 + d)."""
    z = np.asarray(z, dtype=np.float64)
    a = sched.alpha(t)
    root = np.sqrt(1.0 - a * a)
    eps = denoiser.predict(z, t, sched)
    x0 = (z - root * eps) / a
    decoded = decoder.decode(x0)
    value, pgrad = property_fn(decoded[..., :3])
    cot = np.zeros_like(decoded)
    cot[..., :3] = pgrad
    cot = decoder.vjp(x0, cot)
    cot = (cot - root * denoiser.predict_vjp(z, t, sched, cot)) / a
    grad = 2.0 * np.asarray(cfg.target - value)[..., None, None] * cot[..., :3]
    return cap_gradient_norm(grad, cfg.max_grad_norm)


def noisy_guidance_gradient(
    state: PointState,
    t: int,
    denoiser: Denoiser,
    decoder: Decoder,
    property_fn,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Property-loss gradient pulled back to the noisy state, positions only.

    ``property_fn`` maps decoded positions (..., N, 3) to (value, gradient)
    with an exact gradient.  The pullback through the one-step denoised
    estimate uses the denoiser's exact Jacobian, so the result matches
    finite differences of the scalar loss.
    """
    return noisy_gradient_batch(
        state.as_array()[None], t, denoiser, decoder, property_fn, cfg, sched
    )[0]


def clean_descent(x0_positions, property_fn, target: float, steps: int, lr: float):
    """K gradient-descent steps on ||y - f(x0 + delta)||^2 from delta = 0.

    Returns (delta, per-step loss trace).  The trace records the loss at the
    point each gradient was taken; it is not guaranteed monotone.
    """
    x0 = np.asarray(x0_positions, dtype=np.float64)
    delta = np.zeros_like(x0)
    trace = []
    for _ in range(steps):
        value, pgrad = property_fn(x0 + delta)
        resid = np.asarray(target - value)
        trace.append(resid**2)
        delta = delta + lr * 2.0 * resid[..., None, None] * pgrad
    return delta, trace


def clean_guidance_delta(
    state: PointState,
    t: int,
    denoiser: Denoiser,
    property_fn,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
):
    """Clean-space shift for one state: (delta (N, 3), loss trace)."""
    z = state.as_array()
    eps = denoiser.predict(z, t, sched)
    x0 = t0_estimate(z, eps, t, sched)
    delta, trace = clean_descent(x0[:, :3], property_fn, cfg.target, cfg.clean_steps, cfg.clean_lr)
    return delta, [float(v) for v in trace]


def clean_recompose(x_hat0, delta, eps_pred, t: int, sched: NoiseSchedule):
    """Fold a clean-space shift into an augmented noise.

        eps~ = eps - a/sqrt(1-a^2) * delta
        x_t  = a (x0_hat + delta) + sqrt(1-a^2) eps~

    which reproduces the original x_t = a x0_hat + sqrt(1-a^2) eps exactly.
    """
    sched._check_step(t)
    x0 = np.asarray(x_hat0, dtype=np.float64)
    d = np.asarray(delta, dtype=np.float64)
    eps = np.asarray(eps_pred, dtype=np.float64)
    if x0.shape != d.shape or x0.shape != eps.shape:
        raise ValueError("x_hat0, delta and eps_pred must share one shape")
    a = sched.alpha(t)
    root = np.sqrt(1.0 - a * a)
    eps_tilde = eps - a / root * d
    x_t = a * (x0 + d) + root * eps_tilde
    return x_t, eps_tilde
