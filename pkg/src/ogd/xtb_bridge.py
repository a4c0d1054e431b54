"""Subprocess bridge to an external GFN2-xTB executable.

Geometries go out as XYZ (angstrom), the ``gradient`` file the executable
leaves behind (Turbomole format) comes back as energy in Hartree and a
gradient in Hartree/Bohr.  Every call runs in its own scratch directory so
concurrent invocations never share files.  All runtime failures (nonzero
exit, timeout, unparseable output) are soft: the caller gets
``converged=False`` with a zero gradient so a sampling loop is never
aborted by a broken geometry.  Only a missing executable is a hard
configuration error.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geomstate import AtomLabels
from .toyoracle import OracleEval

XTB_PATH_ENV = "OGD_XTB_PATH"

# CODATA: 1 angstrom = 1.889... Bohr
BOHR_PER_ANGSTROM = 1.0 / 0.529177210903
ANGSTROM_PER_BOHR = 0.529177210903


@dataclass(frozen=True)
class XtbConfig:
    executable: str | None = None
    workdir_root: str | None = None
    timeout: float = 120.0
    extra_args: tuple = ()

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        object.__setattr__(self, "extra_args", tuple(self.extra_args))


def resolve_executable(cfg: XtbConfig) -> str:
    """Locate the executable; the environment variable wins over the config."""
    candidate = os.environ.get(XTB_PATH_ENV) or cfg.executable or "xtb"
    found = shutil.which(candidate) if os.sep not in candidate else candidate
    if not found or not Path(found).exists():
        raise FileNotFoundError(
            f"xtb executable not found (looked for {candidate!r}; "
            f"set {XTB_PATH_ENV} or XtbConfig.executable)"
        )
    return str(found)


def write_xyz(labels: AtomLabels, positions_angstrom, comment: str = "") -> str:
    """XYZ text: atom count, comment, then one fixed-point line per atom."""
    pos = np.asarray(positions_angstrom, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError("positions must have shape (N, 3)")
    if pos.shape[0] < 1:
        raise ValueError("need at least one atom")
    if len(labels) != pos.shape[0]:
        raise ValueError(f"{len(labels)} labels for {pos.shape[0]} atoms")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions contain non-finite values")
    lines = [str(pos.shape[0]), comment]
    for sym, (x, y, z) in zip(labels.symbols, pos):
        lines.append(f"{sym} {x:.10f} {y:.10f} {z:.10f}")
    return "\n".join(lines) + "\n"


def parse_xyz(text: str) -> tuple[AtomLabels, np.ndarray]:
    lines = text.splitlines()
    if len(lines) < 2:
        raise ValueError("truncated xyz document")
    try:
        n = int(lines[0].strip())
    except ValueError as exc:
        raise ValueError("first xyz line must be the atom count") from exc
    body = lines[2 : 2 + n]
    if len(body) != n:
        raise ValueError(f"expected {n} atom lines, found {len(body)}")
    symbols, coords = [], []
    for line in body:
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"malformed atom line: {line!r}")
        symbols.append(parts[0])
        coords.append([float(p) for p in parts[1:]])
    return AtomLabels(tuple(symbols)), np.asarray(coords, dtype=np.float64)


_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eEdD][+-]?\d+)?$")


def _to_float(token: str) -> float:
    if not _FLOAT.match(token):
        raise ValueError(f"not a number: {token!r}")
    return float(token.replace("D", "E").replace("d", "e"))


def parse_gradient_file(text: str, n_atoms: int) -> tuple[float, np.ndarray]:
    """Energy (Eh) and gradient (Eh/Bohr) from a Turbomole gradient file.

    Reads the last cycle between ``$grad`` and ``$end``: a header line with
    ``SCF energy =``, ``n_atoms`` coordinate lines (three numbers plus an
    element symbol) and ``n_atoms`` gradient lines (three numbers, Fortran
    D-exponents tolerated).  Raises ValueError on anything malformed.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    try:
        start = max(i for i, ln in enumerate(lines) if ln.startswith("cycle"))
    except ValueError as exc:
        raise ValueError("no cycle header in gradient file") from exc

    header = lines[start]
    match = re.search(r"SCF energy\s*=\s*(\S+)", header)
    if not match:
        raise ValueError("cycle header lacks an SCF energy")
    energy = _to_float(match.group(1))

    body = [ln for ln in lines[start + 1 :] if ln and not ln.startswith("$")]
    if len(body) < 2 * n_atoms:
        raise ValueError("gradient file shorter than 2 * n_atoms lines")
    grad_lines = body[n_atoms : 2 * n_atoms]
    grad = np.empty((n_atoms, 3))
    for i, ln in enumerate(grad_lines):
        parts = ln.split()
        if len(parts) != 3:
            raise ValueError(f"malformed gradient line: {ln!r}")
        grad[i] = [_to_float(p) for p in parts]
    return energy, grad


def invoke(cfg: XtbConfig, labels: AtomLabels, positions_bohr) -> OracleEval:
    """One single-point gradient call on a geometry given in Bohr.

    Runs ``<executable> mol.xyz --grad [extra_args...]`` in a fresh scratch
    directory and parses the ``gradient`` file it writes.  Soft-fails to
    ``converged=False`` with a zero gradient on any runtime problem.
    """
    exe = resolve_executable(cfg)
    pos = np.asarray(positions_bohr, dtype=np.float64)
    n = pos.shape[0]
    zero = OracleEval(energy=float("nan"), gradient=np.zeros((n, 3)), converged=False)
    if not np.all(np.isfinite(pos)):
        return zero

    root = cfg.workdir_root or tempfile.gettempdir()
    os.makedirs(root, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="ogd-xtb-", dir=root) as workdir:
        xyz_path = Path(workdir) / "mol.xyz"
        xyz_path.write_text(write_xyz(labels, pos * ANGSTROM_PER_BOHR, comment="single point"))
        cmd = [exe, "mol.xyz", "--grad", *cfg.extra_args]
        try:
            proc = subprocess.run(
                cmd,
                cwd=workdir,
                timeout=cfg.timeout,
                capture_output=True,
                text=True,
            )
        except (subprocess.TimeoutExpired, OSError):
            return zero
        if proc.returncode != 0:
            return zero
        grad_path = Path(workdir) / "gradient"
        if not grad_path.exists():
            return zero
        try:
            energy, grad = parse_gradient_file(grad_path.read_text(), n)
        except ValueError:
            return zero
        if not (np.isfinite(energy) and np.all(np.isfinite(grad))):
            return zero
        return OracleEval(energy=float(energy), gradient=grad, converged=True)


class XtbBatchObjective:
    """Adapt the bridge to the sampler's batched-objective interface.

    Picklable so worker processes can carry it; each row is one subprocess
    call, so batches degrade to a loop.
    """

    def __init__(self, cfg: XtbConfig, labels: AtomLabels, scalarization: str = "rms"):
        self.cfg = cfg
        self.labels = labels
        self.scalarization = scalarization

    def __call__(self, positions):
        pos = np.asarray(positions, dtype=np.float64)
        flat = pos.reshape((-1,) + pos.shape[-2:])
        vals = np.zeros(flat.shape[0])
        ok = np.zeros(flat.shape[0], dtype=bool)
        for idx, p in enumerate(flat):
            if not np.all(np.isfinite(p)):
                continue
            ev = invoke(self.cfg, self.labels, p)
            if ev.converged:
                ok[idx] = True
                g = ev.gradient
                if self.scalarization == "mean-norm":
                    vals[idx] = float(np.linalg.norm(g.mean(axis=0)))
                else:
                    vals[idx] = float(np.sqrt(np.mean(g * g)))
        return vals.reshape(pos.shape[:-2]), ok.reshape(pos.shape[:-2])


def parse_xyz_many(text: str) -> list[tuple[AtomLabels, np.ndarray]]:
    """Split a concatenated multi-structure XYZ document into blocks."""
    lines = text.splitlines()
    out = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        n = int(lines[i].strip())
        block = "\n".join(lines[i : i + n + 2])
        out.append(parse_xyz(block))
        i += n + 2
    return out
