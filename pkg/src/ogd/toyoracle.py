"""Analytic bonded + Lennard-Jones potentials with exact derivatives.

This is the desk-scale black-box oracle: energies, per-atom gradients, the
force-RMS objective with its exact gradient (via pair Hessians), a monotone
backtracking relaxation for the energy-above-ground-state metric, and the
radius-of-gyration surrogate property.

Evaluation is batched: positions may have shape (N, 3) or (..., N, 3), with
energies/validity broadcast over the leading axes.  Interacting pairs closer
than ``COINCIDENT_TOL`` mark the configuration invalid (zero gradient, NaN
energy) instead of raising, mirroring how an external oracle soft-fails on
broken geometries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geomstate import project_zero_cog

COINCIDENT_TOL = 1e-8

# Backtracking line-search constants (Armijo sufficient decrease).
_ARMIJO_C = 1e-4
_SHRINK = 0.5
_INITIAL_STEP = 0.1
_MAX_BACKTRACKS = 50


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    k: float   # spring constant, energy / length^2
    r0: float  # rest length


@dataclass(frozen=True)
class LennardJones:
    epsilon: float
    sigma: float
    cutoff: float


@dataclass(frozen=True)
class ToyPotential:
    """Harmonic bonds plus an optional LJ term over non-bonded pairs."""

    bonds: tuple = ()
    lj: LennardJones | None = None

    def __post_init__(self):
        bonds = tuple(self.bonds)
        for b in bonds:
            if b.i == b.j:
                raise ValueError("bond endpoints must differ")
            if b.i < 0 or b.j < 0:
                raise ValueError("bond indices must be non-negative")
            if b.k <= 0 or b.r0 <= 0:
                raise ValueError("bond constants must be positive")
        if self.lj is not None:
            if self.lj.epsilon < 0 or self.lj.sigma <= 0 or self.lj.cutoff <= 0:
                raise ValueError("LJ parameters out of range")
        object.__setattr__(self, "bonds", bonds)

    def max_index(self) -> int:
        return max((max(b.i, b.j) for b in self.bonds), default=-1)

    def lj_pairs(self, n_atoms: int) -> list[tuple[int, int]]:
        """All i<j pairs minus bonded ones; empty when no LJ term."""
        if self.lj is None:
            return []
        bonded = {frozenset((b.i, b.j)) for b in self.bonds}
        return [
            (i, j)
            for i in range(n_atoms)
            for j in range(i + 1, n_atoms)
            if frozenset((i, j)) not in bonded
        ]


@dataclass(frozen=True)
class OracleEval:
    energy: float
    gradient: np.ndarray  # (N, 3)
    converged: bool


def harmonic_chain(n_atoms: int, k: float = 1.0, r0: float = 1.0,
                   lj: LennardJones | None = None) -> ToyPotential:
    """Chain of n-1 springs between consecutive atoms."""
    if n_atoms < 2:
        raise ValueError("a chain needs at least two atoms")
    return ToyPotential(tuple(Bond(i, i + 1, k, r0) for i in range(n_atoms - 1)), lj=lj)


def _lj_derivs(eps: float, sigma: float, r: np.ndarray):
    """phi, phi', phi'' for 4 eps ((sigma/r)^12 - (sigma/r)^6)."""
    sr6 = (sigma / r) ** 6
    sr12 = sr6 * sr6
    phi = 4.0 * eps * (sr12 - sr6)
    dphi = 4.0 * eps * (-12.0 * sr12 + 6.0 * sr6) / r
    d2phi = 4.0 * eps * (156.0 * sr12 - 42.0 * sr6) / (r * r)
    return phi, dphi, d2phi


def _pair_lists(pot: ToyPotential, n_atoms: int):
    if pot.max_index() >= n_atoms:
        raise ValueError("potential references atom indices beyond N")
    return list(pot.bonds), pot.lj_pairs(n_atoms)


def evaluate_batch(pot: ToyPotential, positions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Energies, gradients and validity for positions of shape (..., N, 3)."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim < 2 or pos.shape[-1] != 3:
        raise ValueError("positions must have shape (..., N, 3)")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions contain non-finite values")
    n = pos.shape[-2]
    bonds, lj_pairs = _pair_lists(pot, n)

    lead = pos.shape[:-2]
    energy = np.zeros(lead)
    grad = np.zeros_like(pos)
    ok = np.ones(lead, dtype=bool)

    for b in bonds:
        vec = pos[..., b.i, :] - pos[..., b.j, :]
        r = np.linalg.norm(vec, axis=-1)
        ok &= r > COINCIDENT_TOL
        r_safe = np.where(r > COINCIDENT_TOL, r, 1.0)
        energy += 0.5 * b.k * (r - b.r0) ** 2
        f = (b.k * (r - b.r0) / r_safe)[..., None] * vec
        grad[..., b.i, :] += f
        grad[..., b.j, :] -= f

    if pot.lj is not None and lj_pairs:
        eps, sigma, cutoff = pot.lj.epsilon, pot.lj.sigma, pot.lj.cutoff
        for (i, j) in lj_pairs:
            vec = pos[..., i, :] - pos[..., j, :]
            r = np.linalg.norm(vec, axis=-1)
            ok &= r > COINCIDENT_TOL
            r_safe = np.where(r > COINCIDENT_TOL, r, 1.0)
            within = r < cutoff
            phi, dphi, _ = _lj_derivs(eps, sigma, r_safe)
            energy += np.where(within, phi, 0.0)
            f = np.where(within, dphi / r_safe, 0.0)[..., None] * vec
            grad[..., i, :] += f
            grad[..., j, :] -= f

    energy = np.where(ok, energy, np.nan)
    grad = np.where(ok[..., None, None], grad, 0.0)
    return energy, grad, ok


def evaluate(pot: ToyPotential, positions) -> OracleEval:
    """Single-configuration energy and analytic gradient."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2:
        raise ValueError("evaluate expects a single (N, 3) configuration")
    e, g, ok = evaluate_batch(pot, pos)
    return OracleEval(energy=float(e), gradient=g, converged=bool(ok))


def hessian_vector_product(pot: ToyPotential, positions, vector) -> np.ndarray:
    """H v for the pair-potential Hessian, batched over leading axes.

    Each pair term phi(|x_i - x_j|) contributes the standard blocks
    H_ii = phi'' u u^T + (phi'/r)(I - u u^T) = -H_ij with u the unit
    separation vector.
    """
    pos = np.asarray(positions, dtype=np.float64)
    vec = np.asarray(vector, dtype=np.float64)
    if vec.shape != pos.shape:
        raise ValueError("vector must match positions shape")
    n = pos.shape[-2]
    bonds, lj_pairs = _pair_lists(pot, n)
    out = np.zeros_like(pos)

    def add_pair(i, j, dphi, d2phi, u):
        w = vec[..., i, :] - vec[..., j, :]
        uw = np.sum(u * w, axis=-1, keepdims=True)
        contrib = d2phi[..., None] * uw * u + dphi[..., None] * (w - uw * u)
        out[..., i, :] += contrib
        out[..., j, :] -= contrib

    for b in bonds:
        sep = pos[..., b.i, :] - pos[..., b.j, :]
        r = np.linalg.norm(sep, axis=-1)
        r = np.where(r > COINCIDENT_TOL, r, 1.0)
        u = sep / r[..., None]
        add_pair(b.i, b.j, b.k * (r - b.r0) / r, np.full_like(r, b.k), u)

    if pot.lj is not None:
        eps, sigma, cutoff = pot.lj.epsilon, pot.lj.sigma, pot.lj.cutoff
        for (i, j) in lj_pairs:
            sep = pos[..., i, :] - pos[..., j, :]
            r = np.linalg.norm(sep, axis=-1)
            r = np.where(r > COINCIDENT_TOL, r, 1.0)
            u = sep / r[..., None]
            within = r < cutoff
            _, dphi, d2phi = _lj_derivs(eps, sigma, r)
            add_pair(i, j, np.where(within, dphi / r, 0.0), np.where(within, d2phi, 0.0), u)

    return out


def force_rms_of(gradient) -> np.ndarray:
    g = np.asarray(gradient, dtype=np.float64)
    return np.sqrt(np.mean(g * g, axis=(-2, -1)))


def objective_batch(pot: ToyPotential, positions, scalarization: str = "rms"):
    """Guidance objective values and validity for (..., N, 3) positions.

    ``rms``: root mean square over all 3N gradient components.
    ``mean-norm``: Euclidean norm of the mean per-atom gradient (identically
    zero for purely internal forces; kept for completeness).
    """
    e, g, ok = evaluate_batch(pot, positions)
    if scalarization == "rms":
        vals = force_rms_of(g)
    elif scalarization == "mean-norm":
        vals = np.linalg.norm(g.mean(axis=-2), axis=-1)
    else:
        raise ValueError(f"unknown scalarization {scalarization!r}")
    return np.where(ok, vals, 0.0), ok


def objective(pot: ToyPotential, positions, scalarization: str = "rms") -> float:
    """Scalar objective; 0 when the oracle reports an invalid configuration."""
    vals, ok = objective_batch(pot, np.asarray(positions, dtype=np.float64), scalarization)
    return float(vals)


def objective_gradient(pot: ToyPotential, positions, scalarization: str = "rms") -> np.ndarray:
    """Exact gradient of the scalarized objective w.r.t. positions.

    For F = sqrt(sum g^2 / 3N):  dF/dx = H g / (3N F); the zero-force point
    (where F is not differentiable) returns zeros.
    """
    pos = np.asarray(positions, dtype=np.float64)
    e, g, ok = evaluate_batch(pot, pos)
    n3 = g.shape[-2] * 3
    if scalarization == "rms":
        f = force_rms_of(g)
        safe = np.where(f > 0, f, 1.0)
        out = hessian_vector_product(pot, pos, g) / (n3 * safe[..., None, None])
        return np.where((f > 0) & ok[..., None, None], out, 0.0)
    if scalarization == "mean-norm":
        mean_g = g.mean(axis=-2)
        norm = np.linalg.norm(mean_g, axis=-1)
        safe = np.where(norm > 0, norm, 1.0)
        tiled = np.broadcast_to(mean_g[..., None, :], pos.shape)
        out = hessian_vector_product(pot, pos, np.ascontiguousarray(tiled))
        out = out / (g.shape[-2] * safe[..., None, None])
        return np.where((norm > 0) & ok[..., None, None], out, 0.0)
    raise ValueError(f"unknown scalarization {scalarization!r}")


@dataclass(frozen=True)
class RelaxResult:
    positions: np.ndarray
    energy: float
    converged: bool
    iterations: int


def relax(pot: ToyPotential, positions, max_iters: int = 500, tol: float = 1e-6) -> RelaxResult:
    """Gradient descent with Armijo backtracking; energy never increases.

    Stops when the force RMS drops below ``tol`` or ``max_iters`` accepted
    steps were taken.  If a line search exhausts its 50 halvings the run is
    flagged diverged and the best (= current, by monotonicity) state is
    returned.  The result is re-centered to zero centre of gravity.
    """
    x = np.asarray(positions, dtype=np.float64).copy()
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("positions must have shape (N, 3)")
    cur = evaluate(pot, x)
    if not cur.converged:
        return RelaxResult(project_zero_cog(x), float("nan"), False, 0)

    iterations = 0
    converged = False
    for _ in range(max_iters):
        g = cur.gradient
        if force_rms_of(g) < tol:
            converged = True
            break
        decrease = float(np.sum(g * g))
        step = _INITIAL_STEP
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            trial_x = x - step * g
            trial = evaluate(pot, trial_x)
            if trial.converged and trial.energy <= cur.energy - _ARMIJO_C * step * decrease:
                x, cur = trial_x, trial
                accepted = True
                break
            step *= _SHRINK
        if not accepted:
            return RelaxResult(project_zero_cog(x), cur.energy, False, iterations)
        iterations += 1
    else:
        converged = force_rms_of(cur.gradient) < tol

    return RelaxResult(project_zero_cog(x), cur.energy, converged, iterations)


@dataclass(frozen=True)
class BatchRelaxResult:
    positions: np.ndarray   # (B, N, 3)
    energy: np.ndarray      # (B,)
    force_rms: np.ndarray   # (B,)
    converged: np.ndarray   # (B,) bool
    iterations: np.ndarray  # (B,) int


def relax_batch(pot: ToyPotential, positions, max_iters: int = 2000, tol: float = 1e-6) -> BatchRelaxResult:
    """Vectorized twin of ``relax``: the same descent run on (B, N, 3) rows.

    Each row carries its own line-search state; rows stop moving once their
    force RMS drops below ``tol`` or their line search exhausts its halvings.
    """
    x = np.asarray(positions, dtype=np.float64).copy()
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ValueError("positions must have shape (B, N, 3)")
    B = x.shape[0]
    energy, grad, ok = evaluate_batch(pot, x)
    rms = force_rms_of(grad)
    active = ok & (rms >= tol)
    diverged = ~ok
    iterations = np.zeros(B, dtype=int)

    for _ in range(max_iters):
        if not active.any():
            break
        decrease = np.sum(grad * grad, axis=(-2, -1))
        step = np.full(B, _INITIAL_STEP)
        accepted = np.zeros(B, dtype=bool)
        for _ in range(_MAX_BACKTRACKS):
            pending = active & ~accepted
            if not pending.any():
                break
            trial = x - step[:, None, None] * grad
            e_t, g_t, ok_t = evaluate_batch(pot, trial)
            take = pending & ok_t & (e_t <= energy - _ARMIJO_C * step * decrease)
            if take.any():
                x[take] = trial[take]
                energy[take] = e_t[take]
                grad[take] = g_t[take]
                accepted |= take
            step[pending & ~take] *= _SHRINK
        failed = active & ~accepted
        diverged |= failed
        active &= accepted
        iterations[accepted] += 1
        rms = force_rms_of(grad)
        active &= rms >= tol

    x -= x.mean(axis=-2, keepdims=True)
    converged = ~diverged & (rms < tol)
    return BatchRelaxResult(x, energy, rms, converged, iterations)


def radius_of_gyration(positions) -> tuple[np.ndarray, np.ndarray]:
    """Rg = sqrt(mean |x_i|^2) and its gradient x_i / (N Rg), batched.

    Positions are taken as already centered; at Rg = 0 the gradient is zero.
    """
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[-2]
    rg = np.sqrt(np.mean(np.sum(pos * pos, axis=-1), axis=-1))
    safe = np.where(rg > 0, rg, 1.0)
    grad = np.where(rg[..., None, None] > 0, pos / (n * safe[..., None, None]), 0.0)
    return rg, grad
