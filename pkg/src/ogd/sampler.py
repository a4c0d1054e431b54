"""Reverse-diffusion chain orchestration for every sampling mode.

Chains are embarrassingly parallel: chain ``i`` of a run owns two random
streams derived from ``SeedSequence(seed, spawn_key=(i, 0|1))`` — one for the
ancestral noise (initial state plus one draw per step) and one for guidance
randomness (probe matrices, bilevel projections, evolutionary variants).
Splitting the streams keeps trajectories outside the guidance window, and any
run with zero guidance effect, byte-identical to unguided sampling under the
same seed.  Every mode is a pure function of (RunConfig, chain index).

Internally chains are stepped in blocks stacked along a leading axis; the
per-chain streams make the block split (and the CLI worker split) invisible
in the output.  Chains whose state stops being finite (guidance collapse at
extreme scales) are returned as all-zero states, which downstream validity
checks reject.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .denoiser import Decoder, Denoiser, GaussianDenoiser, IdentityDecoder, MixtureDenoiser
from .geomstate import PointState
from .guidance import (
    GuidanceConfig,
    cap_gradient_norm,
    guided_steps,
    noisy_gradient_batch,
    clean_descent,
    spsa_estimate,
)
from .schedule import NoiseSchedule
from .toyoracle import ToyPotential, objective_batch, radius_of_gyration

MODES = (
    "unguided",
    "oracle",
    "noisy",
    "clean",
    "bilevel-noisy",
    "bilevel-clean",
    "evolutionary",
)

_ORACLE_MODES = ("oracle", "bilevel-noisy", "bilevel-clean", "evolutionary")

_SEED_MASK = (1 << 63) - 1
_BLOCK_ELEMENTS = 20_000_000  # cap on pregenerated noise elements per block


@dataclass(frozen=True)
class EvoConfig:
    """Population settings: kappa variants every ``interval`` steps."""

    variant_size: int = 5
    interval: int = 50
    variant_scale: float = 0.1

    def __post_init__(self):
        if self.variant_size < 2:
            raise ValueError("variant_size must be >= 2")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.variant_scale <= 0:
            raise ValueError("variant_scale must be positive")


@dataclass(frozen=True)
class RunConfig:
    n_samples: int
    n_atoms: int
    seed: int
    schedule: NoiseSchedule
    denoiser: Denoiser
    mode: str = "unguided"
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    oracle: object = None          # ToyPotential or callable (..., N, 3) -> (values, valid)
    decoder: Decoder = field(default_factory=IdentityDecoder)
    property_fn: object = radius_of_gyration
    n_features: int = 0
    evo: EvoConfig | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if self.n_features < 0:
            raise ValueError("n_features must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "evolutionary" and self.evo is None:
            raise ValueError("evolutionary mode requires an EvoConfig")
        if self.mode in _ORACLE_MODES and self.oracle is None:
            raise ValueError(f"mode {self.mode!r} requires an oracle")
        if self.guidance.window > self.schedule.total_steps:
            raise ValueError("guidance window exceeds the schedule length")
        mean = getattr(self.denoiser, "mean", None)
        if mean is None:
            means = getattr(self.denoiser, "means", None)
            mean = means[0] if means else None
        if mean is not None and mean.shape != (self.n_atoms, 3 + self.n_features):
            raise ValueError("denoiser mean shape does not match (n_atoms, 3 + n_features)")


def select_best_variant(values, valid) -> int:
    """Index of the smallest valid objective; ties and all-invalid keep 0."""
    vals = np.where(np.asarray(valid, dtype=bool), np.asarray(values, dtype=np.float64), np.inf)
    return int(np.argmin(vals))


def _as_batch_objective(oracle, scalarization: str):
    if isinstance(oracle, ToyPotential):
        pot = oracle

        def fn(positions):
            pos = np.asarray(positions, dtype=np.float64)
            row_ok = np.all(np.isfinite(pos), axis=(-2, -1))
            safe = np.where(row_ok[..., None, None], pos, 0.0)
            vals, ok = objective_batch(pot, safe, scalarization)
            return np.where(row_ok, vals, 0.0), ok & row_ok

        return fn
    if callable(oracle):
        return oracle
    raise TypeError("oracle must be a ToyPotential or a batch objective callable")


def _latent_objective(denoiser, decoder, base, sched):
    """Compose oracle with the decoder and the one-step denoised estimate."""

    def fn(z, t):
        z = np.asarray(z, dtype=np.float64)
        if t > 0:
            a = sched.alpha(t)
            root = np.sqrt(1.0 - a * a)
            with np.errstate(all="ignore"):
                x0 = (z - root * denoiser.predict(z, t, sched)) / a
        else:
            x0 = z
        return base(decoder.decode(x0)[..., :3])

    return fn


def _position_objective(latent_fn, z, t):
    """Positions-only view of the composed objective, features held fixed."""
    feats = z[..., 3:]

    def fn(positions):
        pos = np.asarray(positions, dtype=np.float64)
        if pos.ndim == z.ndim:
            full = np.concatenate([pos, feats], axis=-1)
        else:  # probe axis inserted: (B, P, N, 3)
            tiled = np.broadcast_to(feats[:, None], pos.shape[:-1] + (feats.shape[-1],))
            full = np.concatenate([pos, tiled], axis=-1)
        return latent_fn(full, t)

    return fn


# --------------------------------------------------------------------------
# per-chain randomness


def _generators(seed: int, lo: int, hi: int, stream: int) -> list:
    ent = seed & _SEED_MASK
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=ent, spawn_key=(i, stream)))
        for i in range(lo, hi)
    ]


def _center(arr: np.ndarray) -> np.ndarray:
    arr[..., :3] -= arr[..., :3].mean(axis=-2, keepdims=True)
    return arr


def _rotate(arr: np.ndarray, rotation) -> np.ndarray:
    if rotation is not None:
        arr[..., :3] = arr[..., :3] @ np.asarray(rotation, dtype=np.float64).T
    return arr


def _ancestral_noise(rngs, T, n, D, rotation) -> np.ndarray:
    """Pre-drawn (B, T+1, N, D): row 0 seeds z_T, row T-t+1 feeds step t."""
    out = np.empty((len(rngs), T + 1, n, D))
    for b, rng in enumerate(rngs):
        out[b] = rng.standard_normal((T + 1, n, D))
    return _rotate(_center(out), rotation)


def _draw_pack(rngs, fields, rotation):
    """Per-chain pregenerated guidance draws, one rng call per field.

    ``fields`` is an ordered list of (name, shape, center) tuples; the draw
    order is part of the determinism contract.
    """
    pack = {}
    for name, shape, center in fields:
        arr = np.empty((len(rngs),) + shape)
        for b, rng in enumerate(rngs):
            arr[b] = rng.standard_normal(shape)
        if center:
            _center(arr)
        pack[name] = _rotate(arr, rotation)
    return pack


# --------------------------------------------------------------------------
# block stepping


@dataclass
class _Block:
    cfg: RunConfig
    noise: np.ndarray           # (B, T+1, N, D)
    pack: dict
    guided: dict                # t -> index into pack arrays
    latent_fn: object           # composed oracle or None
    trajectory: list | None


def _step_tables(sched: NoiseSchedule):
    T = sched.total_steps
    coef = np.zeros(T + 1)
    s1mb = np.ones(T + 1)
    sig = np.zeros(T + 1)
    for t in range(1, T + 1):
        b = sched.beta(t)
        a = sched.alpha(t)
        coef[t] = b / np.sqrt(1.0 - a * a)
        s1mb[t] = np.sqrt(1.0 - b)
        sig[t] = sched.sigma(t)
    return coef, s1mb, sig


def _spsa_batch_gradient(z, t, u, blk: _Block):
    """Batched SPSA gradient at latent states z (B, N, D); u (B, P, N, 3)."""
    cfg = blk.cfg.guidance
    fn = _position_objective(blk.latent_fn, z, t)
    est, f0, ok = spsa_estimate(z[..., :3], fn, u, cfg.zeta)
    grad = 2.0 * (cfg.oracle_target - f0)[..., None, None] * est
    grad = np.where(ok[..., None, None], grad, 0.0)
    return cap_gradient_norm(grad, cfg.max_grad_norm)


def _run_block(cfg: RunConfig, lo: int, hi: int, rotation, record: bool):
    sched = cfg.schedule
    T = sched.total_steps
    n, d = cfg.n_atoms, cfg.n_features
    D = 3 + d
    g = cfg.guidance

    anc = _generators(cfg.seed, lo, hi, 0)
    gud = _generators(cfg.seed, lo, hi, 1)
    noise = _ancestral_noise(anc, T, n, D, rotation)

    gts = guided_steps(g, T) if cfg.mode not in ("unguided", "evolutionary") else []
    guided_index = {t: i for i, t in enumerate(gts)}
    P = g.probes

    fields = []
    if cfg.mode == "oracle" and gts and g.scale > 0:
        fields = [("u", (len(gts), P, n, 3), g.center_perturbation)]
    elif cfg.mode == "bilevel-noisy" and gts:
        fields = [
            ("noise1", (len(gts), n, D), True),
            ("proj", (len(gts), n, D), True),
            ("u", (len(gts), P, n, 3), g.center_perturbation),
        ]
    elif cfg.mode == "bilevel-clean" and gts and g.effective_oracle_scale > 0:
        fields = [("u", (len(gts), P, n, 3), g.center_perturbation)]
    elif cfg.mode == "evolutionary":
        spawns = [t for t in range(T, 0, -1) if t % cfg.evo.interval == 0]
        guided_index = {t: i for i, t in enumerate(spawns)}
        km1 = cfg.evo.variant_size - 1
        if spawns:
            fields = [
                ("perturb", (len(spawns), km1, n, D), True),
                ("vnoise", (len(spawns), km1, n, D), True),
            ]
    pack = _draw_pack(gud, fields, rotation)

    latent_fn = None
    if cfg.mode in _ORACLE_MODES:
        base = _as_batch_objective(cfg.oracle, g.scalarization)
        latent_fn = _latent_objective(cfg.denoiser, cfg.decoder, base, sched)

    blk = _Block(cfg, noise, pack, guided_index, latent_fn, [] if record else None)
    coef, s1mb, sig = _step_tables(sched)

    z = noise[:, 0].copy()
    if blk.trajectory is not None:
        blk.trajectory.append(z.copy())

    stepper = _STEPPERS[cfg.mode]
    with np.errstate(invalid="ignore", over="ignore"):
        for t in range(T, 0, -1):
            z = stepper(z, t, blk, coef, s1mb, sig)
            _center(z)
            if blk.trajectory is not None:
                blk.trajectory.append(z.copy())
    return z, blk.trajectory


def _predict(z, t, blk):
    return blk.cfg.denoiser.predict(z, t, blk.cfg.schedule)


def _step_plain(z, t, blk, coef, s1mb, sig):
    eps = _predict(z, t, blk)
    mean = (z - coef[t] * eps) / s1mb[t]
    return mean + sig[t] * blk.noise[:, blk.cfg.schedule.total_steps - t + 1]


def _step_oracle(z, t, blk, coef, s1mb, sig):
    cfg = blk.cfg
    g = cfg.guidance
    eps = _predict(z, t, blk)
    mean = (z - coef[t] * eps) / s1mb[t]
    if t in blk.guided and g.scale > 0:
        u = blk.pack["u"][:, blk.guided[t]]
        grad = _spsa_batch_gradient(z, t, u, blk)
        mean[..., :3] += g.scale * sig[t] ** 2 * grad
    return mean + sig[t] * blk.noise[:, cfg.schedule.total_steps - t + 1]


def _step_noisy(z, t, blk, coef, s1mb, sig):
    cfg = blk.cfg
    g = cfg.guidance
    eps = _predict(z, t, blk)
    mean = (z - coef[t] * eps) / s1mb[t]
    if t in blk.guided and g.scale > 0:
        grad = noisy_gradient_batch(z, t, cfg.denoiser, cfg.decoder, cfg.property_fn, g, cfg.schedule)
        mean[..., :3] += g.scale * sig[t] ** 2 * grad
    return mean + sig[t] * blk.noise[:, cfg.schedule.total_steps - t + 1]


def _step_clean(z, t, blk, coef, s1mb, sig):
    cfg = blk.cfg
    g = cfg.guidance
    sched = cfg.schedule
    eps = _predict(z, t, blk)
    if t in blk.guided and g.scale > 0 and g.clean_lr > 0:
        a = sched.alpha(t)
        root = np.sqrt(1.0 - a * a)
        x0 = (z - root * eps) / a
        delta, _ = clean_descent(
            x0[..., :3], cfg.property_fn, g.target, g.clean_steps, g.scale * g.clean_lr
        )
        eps = eps.copy()
        eps[..., :3] -= a / root * delta
    mean = (z - coef[t] * eps) / s1mb[t]
    return mean + sig[t] * blk.noise[:, sched.total_steps - t + 1]


def _step_bilevel_noisy(z, t, blk, coef, s1mb, sig):
    cfg = blk.cfg
    g = cfg.guidance
    sched = cfg.schedule
    if t not in blk.guided:
        return _step_plain(z, t, blk, coef, s1mb, sig)
    idx = blk.guided[t]

    # lower level: property-guided ancestral step to an intermediate t-1 state
    eps = _predict(z, t, blk)
    mean = (z - coef[t] * eps) / s1mb[t]
    if g.scale > 0:
        grad = noisy_gradient_batch(z, t, cfg.denoiser, cfg.decoder, cfg.property_fn, g, sched)
        mean[..., :3] += g.scale * sig[t] ** 2 * grad
    z1 = _center(mean + sig[t] * blk.pack["noise1"][:, idx])

    # project the intermediate state from t-1 back to t
    ratio = sched.alpha(t) / sched.alpha(t - 1)
    z_t = _center(ratio * z1 + np.sqrt(1.0 - ratio * ratio) * blk.pack["proj"][:, idx])

    # upper level: oracle-guided ancestral step from the projected state
    eps2 = _predict(z_t, t, blk)
    mean2 = (z_t - coef[t] * eps2) / s1mb[t]
    so = g.effective_oracle_scale
    if so > 0:
        grad = _spsa_batch_gradient(z_t, t, blk.pack["u"][:, idx], blk)
        mean2[..., :3] += so * sig[t] ** 2 * grad
    return mean2 + sig[t] * blk.noise[:, sched.total_steps - t + 1]


def _step_bilevel_clean(z, t, blk, coef, s1mb, sig):
    cfg = blk.cfg
    g = cfg.guidance
    sched = cfg.schedule
    eps = _predict(z, t, blk)
    if t in blk.guided:
        a = sched.alpha(t)
        root = np.sqrt(1.0 - a * a)
        x0 = (z - root * eps) / a
        delta = np.zeros_like(x0[..., :3])
        if g.scale > 0 and g.clean_lr > 0:
            delta, _ = clean_descent(
                x0[..., :3], cfg.property_fn, g.target, g.clean_steps, g.scale * g.clean_lr
            )
            eps = eps.copy()
            eps[..., :3] -= a / root * delta
        mean = (z - coef[t] * eps) / s1mb[t]
        so = g.effective_oracle_scale
        if so > 0:
            shifted = x0.copy()
            shifted[..., :3] += delta
            grad = _spsa_batch_gradient(shifted, 0, blk.pack["u"][:, blk.guided[t]], blk)
            mean[..., :3] += so * sig[t] ** 2 * grad
    else:
        mean = (z - coef[t] * eps) / s1mb[t]
    return mean + sig[t] * blk.noise[:, sched.total_steps - t + 1]


def _step_evolutionary(z, t, blk, coef, s1mb, sig):
    cfg = blk.cfg
    sched = cfg.schedule
    if t not in blk.guided:
        return _step_plain(z, t, blk, coef, s1mb, sig)
    idx = blk.guided[t]
    B, n, D = z.shape
    kappa = cfg.evo.variant_size

    variants = np.empty((B, kappa, n, D))
    variants[:, 0] = z
    variants[:, 1:] = z[:, None] + cfg.evo.variant_scale * blk.pack["perturb"][:, idx]

    flat = variants.reshape(B * kappa, n, D)
    eps = _predict(flat, t, blk)
    mean = (flat - coef[t] * eps) / s1mb[t]
    step_noise = np.empty((B, kappa, n, D))
    step_noise[:, 0] = blk.noise[:, sched.total_steps - t + 1]
    step_noise[:, 1:] = blk.pack["vnoise"][:, idx]
    stepped = _center(mean + sig[t] * step_noise.reshape(B * kappa, n, D))

    vals, ok = blk.latent_fn(stepped, t - 1)
    vals = np.where(ok, vals, np.inf).reshape(B, kappa)
    winner = np.argmin(vals, axis=1)
    return stepped.reshape(B, kappa, n, D)[np.arange(B), winner]


_STEPPERS = {
    "unguided": _step_plain,
    "oracle": _step_oracle,
    "noisy": _step_noisy,
    "clean": _step_clean,
    "bilevel-noisy": _step_bilevel_noisy,
    "bilevel-clean": _step_bilevel_clean,
    "evolutionary": _step_evolutionary,
}


# --------------------------------------------------------------------------
# public entry points


def _finalize(z: np.ndarray, n_features: int) -> list[PointState]:
    from .geomstate import COG_TOL

    states = []
    for row in z:
        row = row.copy()
        if np.all(np.isfinite(row)):
            row[:, :3] -= row[:, :3].mean(axis=0, keepdims=True)
        # non-finite states, and states too large for exact centering, are
        # collapsed chains; zero them out so validity checks reject them
        if not np.all(np.isfinite(row)) or np.abs(row[:, :3].mean(axis=0)).max() > COG_TOL:
            row = np.zeros_like(row)
        states.append(PointState.from_array(row, n_features))
    return states


def run_chain_range(
    cfg: RunConfig,
    lo: int,
    hi: int,
    noise_rotation=None,
    return_trajectory: bool = False,
):
    """Run chains [lo, hi) of the configured mode.

    ``noise_rotation`` applies a fixed rotation to the positions block of
    every drawn noise tensor (the hook behind the equivariance checks).
    """
    if not 0 <= lo <= hi <= cfg.n_samples:
        raise ValueError("invalid chain range")
    sched = cfg.schedule
    per_chain = (sched.total_steps + 1) * cfg.n_atoms * (3 + cfg.n_features)
    block = max(1, min(512, _BLOCK_ELEMENTS // max(per_chain, 1)))
    states: list[PointState] = []
    trajectories = []
    for start in range(lo, hi, block):
        stop = min(start + block, hi)
        z, traj = _run_block(cfg, start, stop, noise_rotation, return_trajectory)
        states.extend(_finalize(z, cfg.n_features))
        if return_trajectory:
            trajectories.append(traj)
    if return_trajectory:
        merged = [np.concatenate(parts) for parts in zip(*trajectories)]
        return states, merged
    return states


def run_mode(cfg: RunConfig, *, noise_rotation=None, return_trajectory: bool = False):
    """All chains of the configured mode; see the per-mode wrappers below."""
    return run_chain_range(cfg, 0, cfg.n_samples, noise_rotation, return_trajectory)


def _mode_entry(mode):
    def fn(cfg: RunConfig, *, noise_rotation=None, return_trajectory=False):
        if cfg.mode != mode:
            cfg = replace(cfg, mode=mode)
        return run_mode(cfg, noise_rotation=noise_rotation, return_trajectory=return_trajectory)

    fn.__name__ = f"sample_{mode.replace('-', '_')}"
    return fn


sample_unguided = _mode_entry("unguided")
sample_oracle_guided = _mode_entry("oracle")
sample_noisy_guided = _mode_entry("noisy")
sample_clean_guided = _mode_entry("clean")
sample_bilevel_noisy = _mode_entry("bilevel-noisy")
sample_bilevel_clean = _mode_entry("bilevel-clean")
sample_evolutionary = _mode_entry("evolutionary")
