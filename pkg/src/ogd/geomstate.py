"""Point-cloud states with the zero-centre-of-gravity position constraint."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COG_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-10


def project_zero_cog(positions) -> np.ndarray:
    """Subtract the per-axis mean so every column averages to zero."""
    pos = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions contain non-finite values")
    if pos.ndim < 2 or pos.shape[-1] != 3 or pos.shape[-2] < 1:
        raise ValueError("positions must have shape (..., N, 3) with N >= 1")
    return pos - pos.mean(axis=-2, keepdims=True)


@dataclass(frozen=True)
class PointState:
    """Immutable snapshot of N atom positions plus optional per-atom features."""

    positions: np.ndarray
    features: np.ndarray = None  # (N, d); None means d = 0
    cog_constrained: bool = True

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        if pos.shape[0] < 1:
            raise ValueError("need at least one atom")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        feat = self.features
        feat = np.zeros((pos.shape[0], 0)) if feat is None else np.asarray(feat, dtype=np.float64)
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise ValueError("features must have shape (N, d)")
        if not np.all(np.isfinite(feat)):
            raise ValueError("features contain non-finite values")
        if self.cog_constrained:
            drift = np.abs(pos.mean(axis=0)).max()
            if drift > COG_TOL:
                raise ValueError(f"positions violate zero centre of gravity (|mean| = {drift:.3e})")
        pos = pos.copy()
        pos.flags.writeable = False
        feat = feat.copy()
        feat.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def as_array(self) -> np.ndarray:
        """Concatenated (N, 3 + d) view: positions first, then features."""
        return np.concatenate([self.positions, self.features], axis=1)

    @classmethod
    def from_array(cls, arr, n_features: int = 0, cog_constrained: bool = True) -> "PointState":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 + n_features:
            raise ValueError(f"expected shape (N, {3 + n_features})")
        return cls(arr[:, :3], arr[:, 3:], cog_constrained=cog_constrained)


@dataclass(frozen=True)
class AtomLabels:
    """Element symbols paired with a PointState of the same length."""

    symbols: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(str(s) for s in self.symbols))
        if len(self.symbols) < 1:
            raise ValueError("need at least one symbol")

    def __len__(self) -> int:
        return len(self.symbols)


def sample_perturbation(n_atoms: int, rng: np.random.Generator, center: bool = True) -> np.ndarray:
    """Draw an (N, 3) standard-normal perturbation, column-centered when asked."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    u = rng.standard_normal((n_atoms, 3))
    return project_zero_cog(u) if center else u


def apply_rotation(state: PointState, rotation) -> PointState:
    """Rotate positions (row convention x -> x R^T); features untouched."""
    R = np.asarray(rotation, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    defect = np.abs(R.T @ R - np.eye(3)).max()
    if defect > ORTHOGONALITY_TOL:
        raise ValueError(f"matrix is not orthogonal (|R^T R - I| = {defect:.3e})")
    return PointState(
        state.positions @ R.T,
        state.features,
        cog_constrained=state.cog_constrained,
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random proper rotation from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
