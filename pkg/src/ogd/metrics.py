"""Evaluation quantities for generated samples and SPSA-quality diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .toyoracle import ToyPotential, evaluate, evaluate_batch, radius_of_gyration, relax, relax_batch

HISTOGRAM_BINS = 50


def force_rms(gradient) -> np.ndarray | float:
    """Root mean square over all 3N gradient components (batched)."""
    g = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite values")
    out = np.sqrt(np.mean(g * g, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def energy_above_ground_state(
    pot: ToyPotential,
    positions,
    *,
    max_iters: int = 500,
    tol: float = 1e-6,
) -> tuple[float, bool]:
    """E(state) - E(relaxed state) plus the relaxation's convergence flag.

    Non-negative whenever the relaxation converged (descent is monotone);
    reported best-effort with converged=False otherwise.
    """
    start = evaluate(pot, positions)
    if not start.converged:
        return float("nan"), False
    res = relax(pot, positions, max_iters=max_iters, tol=tol)
    return float(start.energy - res.energy), res.converged


def property_mae(values, target: float) -> float:
    vals = np.asarray(values, dtype=np.float64)
    return float(np.mean(np.abs(vals - target)))


def min_pair_distance(positions) -> float:
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    if n < 2:
        return float("inf")
    diffs = pos[:, None, :] - pos[None, :, :]
    dists = np.linalg.norm(diffs, axis=-1)
    return float(dists[np.triu_indices(n, k=1)].min())


def toy_validity(
    pot: ToyPotential,
    positions,
    *,
    tol: float = 1e-4,
    min_dist: float = 0.2,
    max_iters: int = 500,
) -> bool:
    """Geometric validity proxy: relaxable within budget and no near-collisions."""
    if min_pair_distance(positions) <= min_dist:
        return False
    return relax(pot, positions, max_iters=max_iters, tol=tol).converged


# --------------------------------------------------------------------------
# SPSA estimator diagnostics


@dataclass
class SpsaDiagnostic:
    """Per-state estimator quality against an exact gradient.

    ``probe_cosines`` holds one cosine per probe; states where the exact
    gradient vanishes are flagged ``degenerate`` and carry NaN entries.
    """

    probe_cosines: np.ndarray       # (n_states, n_probes)
    mean_estimate_cosine: np.ndarray  # (n_states,)
    relative_l2_error: np.ndarray     # (n_states,)
    degenerate: np.ndarray            # (n_states,) bool

    @property
    def worst_cosine(self) -> float:
        good = self.mean_estimate_cosine[~self.degenerate]
        return float(good.min()) if good.size else float("nan")

    @property
    def worst_relative_error(self) -> float:
        good = self.relative_l2_error[~self.degenerate]
        return float(good.max()) if good.size else float("nan")


def _cosine(a, b, axis=None):
    num = np.sum(a * b, axis=axis)
    den = np.linalg.norm(a, axis=axis) * np.linalg.norm(b, axis=axis)
    return num / np.where(den > 0, den, 1.0)


def spsa_cosine_diagnostic(
    objective_batch,
    gradient_fn,
    states,
    n_probes: int,
    zeta: float,
    rng: np.random.Generator,
    center: bool = True,
) -> SpsaDiagnostic:
    """Compare two-sided random-probe estimates with an exact gradient.

    ``objective_batch`` maps stacked (..., N, 3) positions to (values, valid);
    ``gradient_fn`` returns the exact objective gradient at one state.
    Reports the per-probe cosine distribution and the cosine / relative L2
    error of the probe-averaged estimate.
    """
    states = [np.asarray(s, dtype=np.float64) for s in states]
    n_states = len(states)
    probe_cos = np.full((n_states, n_probes), np.nan)
    mean_cos = np.full(n_states, np.nan)
    rel_err = np.full(n_states, np.nan)
    degenerate = np.zeros(n_states, dtype=bool)

    for s_idx, pos in enumerate(states):
        exact = np.asarray(gradient_fn(pos), dtype=np.float64)
        norm = np.linalg.norm(exact)
        if norm == 0:
            degenerate[s_idx] = True
            continue
        n = pos.shape[0]
        u = rng.standard_normal((n_probes, n, 3))
        if center:
            u -= u.mean(axis=-2, keepdims=True)
        fp, okp = objective_batch(pos[None] + zeta * u)
        fm, okm = objective_batch(pos[None] - zeta * u)
        ok = okp & okm
        d = (fp - fm) / (2.0 * zeta)
        est = d[:, None, None] * u
        probe_cos[s_idx] = np.where(ok, _cosine(est, exact[None], axis=(-2, -1)), np.nan)
        mean_est = est[ok].mean(axis=0)
        mean_cos[s_idx] = _cosine(mean_est, exact)
        rel_err[s_idx] = np.linalg.norm(mean_est - exact) / norm

    return SpsaDiagnostic(probe_cos, mean_cos, rel_err, degenerate)


# --------------------------------------------------------------------------
# per-run reports


@dataclass
class SampleRecord:
    index: int
    force_rms: float
    energy: float
    energy_above_gs: float
    property_value: float
    valid: bool


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass
class SampleReport:
    records: list
    aggregates: dict
    histograms: dict
    metadata: dict = field(default_factory=dict)


def _histogram(values, bins: int = HISTOGRAM_BINS) -> Histogram:
    """Uniform bins over [0, max]; NaN entries are dropped before binning."""
    vals = np.asarray(values, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    top = float(vals.max()) if vals.size else 1.0
    if top <= 0:
        top = 1.0
    counts, edges = np.histogram(vals, bins=bins, range=(0.0, top))
    return Histogram(edges=edges, counts=counts)


def _agg(values) -> tuple[float, float]:
    vals = np.asarray(values, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return float("nan"), float("nan")
    return float(vals.mean()), float(np.median(vals))


def build_report(
    states,
    pot: ToyPotential | None,
    *,
    target: float | None = None,
    relax_max_iters: int = 2000,
    relax_tol: float = 1e-6,
    min_dist: float = 0.2,
    validity_tol: float = 1e-4,
    bins: int = HISTOGRAM_BINS,
    metadata: dict | None = None,
) -> SampleReport:
    """Per-sample metrics plus order-independent aggregates and histograms.

    With a toy potential the rows carry energy, force RMS, the energy above
    the relaxed state, and the validity proxy; without one (external-oracle
    runs) only the property column is filled.
    """
    if pot is None:
        records = []
        for idx, state in enumerate(states):
            rg, _ = radius_of_gyration(state.positions)
            records.append(SampleRecord(idx, float("nan"), float("nan"), float("nan"), float(rg), True))
        return report_from_records(records, target=target, bins=bins, metadata=metadata)

    pos = np.stack([s.positions for s in states])
    rgs, _ = radius_of_gyration(pos)
    energies, grads, ok = evaluate_batch(pot, pos)
    frms = np.where(ok, np.sqrt(np.mean(grads * grads, axis=(-2, -1))), np.nan)
    relaxed = relax_batch(pot, pos, max_iters=relax_max_iters, tol=relax_tol)
    gaps = np.where(ok, energies - relaxed.energy, np.nan)
    # valid: the shared descent reached the validity tolerance (equivalent to
    # a converged relaxation at that tolerance) and no near-collisions
    dists = np.array([min_pair_distance(p) for p in pos])
    valid = ok & (relaxed.force_rms <= validity_tol) & (dists > min_dist)
    records = [
        SampleRecord(i, float(frms[i]), float(energies[i]), float(gaps[i]), float(rgs[i]), bool(valid[i]))
        for i in range(len(states))
    ]
    return report_from_records(records, target=target, bins=bins, metadata=metadata)


def report_from_records(
    records,
    *,
    target: float | None = None,
    bins: int = HISTOGRAM_BINS,
    metadata: dict | None = None,
) -> SampleReport:
    """Aggregate existing per-sample records (order-independent)."""
    frms_all = np.array([r.force_rms for r in records])
    energy_all = np.array([r.energy for r in records])
    gaps_all = np.array([r.energy_above_gs for r in records])
    props_all = np.array([r.property_value for r in records])

    frms_mean, frms_median = _agg(frms_all)
    gap_mean, gap_median = _agg(gaps_all)
    energy_mean, _ = _agg(energy_all)
    prop_mean, prop_median = _agg(props_all)

    finite_frms = frms_all[np.isfinite(frms_all)]
    pooled = float(np.sqrt(np.mean(finite_frms**2))) if finite_frms.size else float("nan")

    aggregates = {
        "n_samples": len(records),
        "valid_fraction": float(np.mean([r.valid for r in records])),
        "force_rms_mean": frms_mean,
        "force_rms_median": frms_median,
        "force_rms_pooled": pooled,
        "energy_mean": energy_mean,
        "energy_above_gs_mean": gap_mean,
        "energy_above_gs_median": gap_median,
        "property_mean": prop_mean,
        "property_median": prop_median,
    }
    if target is not None:
        aggregates["property_target"] = float(target)
        aggregates["property_mae"] = property_mae(props_all[np.isfinite(props_all)], target)

    histograms = {
        "force_rms": _histogram(frms_all, bins),
        "energy_above_gs": _histogram(gaps_all, bins),
        "property_value": _histogram(props_all, bins),
    }
    return SampleReport(records, aggregates, histograms, dict(metadata or {}))
