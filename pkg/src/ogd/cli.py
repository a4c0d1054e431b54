"""Command-line front end: sample, sweep, gradcheck, relax, report.

Configuration comes from an optional YAML file plus flag overrides; the
resolved configuration is hashed and written into every output file, and a
manifest captures it verbatim so any run can be reproduced byte-for-byte
from its run directory.  Exit codes: 0 success, 1 runtime failure, 2
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import metrics, plots, reporting
from .denoiser import GaussianDenoiser, IdentityDecoder, MixtureDenoiser, ZeroDenoiser
from .geomstate import AtomLabels, project_zero_cog
from .guidance import GuidanceConfig
from .sampler import EvoConfig, MODES, RunConfig, run_chain_range
from .schedule import build_schedule
from .toyoracle import (
    Bond,
    LennardJones,
    ToyPotential,
    evaluate,
    force_rms_of,
    objective_batch,
    objective_gradient,
    radius_of_gyration,
    relax,
)
from .xtb_bridge import XtbBatchObjective, XtbConfig, invoke, parse_xyz_many, resolve_executable, write_xyz

DEFAULT_SCALES = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class ConfigError(Exception):
    pass


DEFAULTS = {
    "mode": "unguided",
    "n": 100,
    "atoms": 4,
    "features": 0,
    "seed": 0,
    "jobs": 1,
    "oracle": "toy",
    "out": "runs/run",
    "dump_xyz": False,
    "plots": True,
    "element": "C",
    "schedule": {
        "kind": "linear",
        "steps": 1000,
        "beta": None,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "power": 2.0,
    },
    "denoiser": {
        "variant": "gaussian",
        "scale": 0.3,
        "target": {"kind": "chain", "spacing": 1.4},
        "components": None,
    },
    "potential": {
        "kind": "chain",
        "k": 8.0,
        "r0": 1.0,
        "bonds": None,
        "lj": {"epsilon": 0.1, "sigma": 0.9, "cutoff": 4.0},
    },
    "guidance": {
        "scale": 0.0,
        "zeta": 1e-6,
        "window": None,
        "skip": 1,
        "clean_steps": 1,
        "clean_lr": 0.01,
        "target": None,
        "scalarization": "rms",
        "oracle_scale": None,
        "oracle_target": 0.0,
        "probes": 1,
        "max_grad_norm": None,
        "center_perturbation": True,
    },
    "evo": {"variant_size": 5, "interval": 50, "variant_scale": 0.1},
    "xtb": {"executable": None, "workdir": None, "timeout": 120.0, "extra_args": []},
    "report": {
        "bins": 50,
        "relax_max_iters": 2000,
        "relax_tol": 1e-6,
        "min_dist": 0.2,
        "validity_tol": 1e-4,
    },
}


def _deep_update(base: dict, update: dict) -> dict:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def resolve_experiment(config_path: str | None, overrides: dict) -> dict:
    exp = copy.deepcopy(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        _deep_update(exp, loaded)
    _deep_update(exp, overrides)
    if exp["guidance"]["window"] is None:
        exp["guidance"]["window"] = min(400, int(exp["schedule"]["steps"]))
    return exp


def chain_positions(n: int, spacing: float) -> np.ndarray:
    """Collinear centered chain along x with the given spacing."""
    pos = np.zeros((n, 3))
    pos[:, 0] = (np.arange(n) - (n - 1) / 2.0) * spacing
    return pos


def _target_positions(spec: dict, n_atoms: int) -> np.ndarray:
    kind = spec.get("kind", "chain")
    if kind == "chain":
        return chain_positions(n_atoms, float(spec.get("spacing", 1.4)))
    if kind == "explicit":
        pos = np.asarray(spec.get("positions"), dtype=np.float64)
        if pos.shape != (n_atoms, 3):
            raise ConfigError(f"explicit target must have shape ({n_atoms}, 3)")
        return project_zero_cog(pos)
    raise ConfigError(f"unknown target kind {kind!r}")


def _mean_state(spec: dict, n_atoms: int, n_features: int) -> np.ndarray:
    pos = _target_positions(spec.get("target", {}), n_atoms)
    return np.concatenate([pos, np.zeros((n_atoms, n_features))], axis=1)


def build_denoiser(exp: dict):
    spec = exp["denoiser"]
    variant = spec.get("variant", "gaussian")
    n, d = int(exp["atoms"]), int(exp["features"])
    if variant == "zero":
        return ZeroDenoiser()
    if variant == "gaussian":
        return GaussianDenoiser(mean=_mean_state(spec, n, d), scale=float(spec["scale"]))
    if variant == "mixture":
        comps = spec.get("components")
        if not comps:
            raise ConfigError("mixture denoiser requires a components list")
        weights = [float(c["weight"]) for c in comps]
        means = [_mean_state(c, n, d) for c in comps]
        scales = [float(c["scale"]) for c in comps]
        return MixtureDenoiser(weights=np.array(weights), means=tuple(means), scales=np.array(scales))
    raise ConfigError(f"unknown denoiser variant {variant!r}")


def build_potential(exp: dict) -> ToyPotential | None:
    spec = exp["potential"]
    kind = spec.get("kind", "chain")
    if kind == "none":
        return None
    lj_spec = spec.get("lj")
    lj = None
    if lj_spec:
        lj = LennardJones(float(lj_spec["epsilon"]), float(lj_spec["sigma"]), float(lj_spec["cutoff"]))
    if kind == "chain":
        n = int(exp["atoms"])
        if n < 2:
            raise ConfigError("chain potential needs at least 2 atoms")
        bonds = tuple(Bond(i, i + 1, float(spec["k"]), float(spec["r0"])) for i in range(n - 1))
    elif kind == "bonds":
        entries = spec.get("bonds") or []
        bonds = tuple(Bond(int(b["i"]), int(b["j"]), float(b["k"]), float(b["r0"])) for b in entries)
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")
    try:
        return ToyPotential(bonds, lj=lj)
    except ValueError as exc:
        raise ConfigError(f"invalid potential: {exc}") from exc


def build_xtb_config(exp: dict) -> XtbConfig:
    spec = exp["xtb"]
    return XtbConfig(
        executable=spec.get("executable"),
        workdir_root=spec.get("workdir"),
        timeout=float(spec.get("timeout", 120.0)),
        extra_args=tuple(spec.get("extra_args") or ()),
    )


def build_run_config(exp: dict):
    """Resolve the experiment dict into a RunConfig plus report helpers."""
    try:
        sched_spec = exp["schedule"]
        sched = build_schedule(
            sched_spec["kind"],
            int(sched_spec["steps"]),
            beta=sched_spec.get("beta"),
            beta_start=float(sched_spec["beta_start"]),
            beta_end=float(sched_spec["beta_end"]),
            power=float(sched_spec.get("power", 2.0)),
        )
        denoiser = build_denoiser(exp)
        pot = build_potential(exp)
        labels = AtomLabels(tuple([exp["element"]] * int(exp["atoms"])))

        if exp["oracle"] == "toy":
            oracle = pot
        elif exp["oracle"] == "xtb":
            xtb_cfg = build_xtb_config(exp)
            resolve_executable(xtb_cfg)  # missing executable is a config error
            oracle = XtbBatchObjective(xtb_cfg, labels, exp["guidance"]["scalarization"])
        else:
            raise ConfigError(f"unknown oracle {exp['oracle']!r}")

        gspec = dict(exp["guidance"])
        if gspec.get("target") is None:
            gspec["target"] = 0.0
        guidance = GuidanceConfig(
            scale=float(gspec["scale"]),
            zeta=float(gspec["zeta"]),
            window=int(gspec["window"]),
            skip=int(gspec["skip"]),
            clean_steps=int(gspec["clean_steps"]),
            clean_lr=float(gspec["clean_lr"]),
            target=float(gspec["target"]),
            scalarization=gspec["scalarization"],
            oracle_scale=None if gspec.get("oracle_scale") is None else float(gspec["oracle_scale"]),
            oracle_target=float(gspec.get("oracle_target", 0.0)),
            probes=int(gspec.get("probes", 1)),
            max_grad_norm=None if gspec.get("max_grad_norm") is None else float(gspec["max_grad_norm"]),
            center_perturbation=bool(gspec.get("center_perturbation", True)),
        )
        evo = None
        if exp["mode"] == "evolutionary":
            espec = exp["evo"]
            evo = EvoConfig(
                variant_size=int(espec["variant_size"]),
                interval=int(espec["interval"]),
                variant_scale=float(espec["variant_scale"]),
            )
        cfg = RunConfig(
            n_samples=int(exp["n"]),
            n_atoms=int(exp["atoms"]),
            seed=int(exp["seed"]),
            schedule=sched,
            denoiser=denoiser,
            mode=exp["mode"],
            guidance=guidance,
            oracle=oracle,
            decoder=IdentityDecoder(),
            property_fn=radius_of_gyration,
            n_features=int(exp["features"]),
            evo=evo,
        )
    except ConfigError:
        raise
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg, pot, labels


def _run_chains(cfg: RunConfig, jobs: int):
    if jobs <= 1 or cfg.n_samples < 2 * jobs:
        return run_chain_range(cfg, 0, cfg.n_samples)
    bounds = np.linspace(0, cfg.n_samples, jobs + 1).astype(int)
    ranges = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    states = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_chain_range, cfg, lo, hi) for lo, hi in ranges]
        for fut in futures:  # submission order == chain order
            states.extend(fut.result())
    return states


def _xtb_records(states, exp: dict, labels: AtomLabels):
    xtb_cfg = build_xtb_config(exp)
    min_dist = float(exp["report"]["min_dist"])
    records = []
    for idx, state in enumerate(states):
        rg, _ = radius_of_gyration(state.positions)
        ev = invoke(xtb_cfg, labels, state.positions)
        frms = metrics.force_rms(ev.gradient) if ev.converged else float("nan")
        valid = ev.converged and metrics.min_pair_distance(state.positions) > min_dist
        records.append(
            metrics.SampleRecord(idx, float(frms), float(ev.energy), float("nan"), float(rg), bool(valid))
        )
    return records


def _build_report(states, exp: dict, pot, labels) -> metrics.SampleReport:
    rep = exp["report"]
    target = exp["guidance"].get("target")
    meta = {"mode": exp["mode"], "scale": exp["guidance"]["scale"], "seed": exp["seed"], "n": exp["n"]}
    if exp["oracle"] == "xtb":
        records = _xtb_records(states, exp, labels)
        return metrics.report_from_records(
            records, target=target, bins=int(rep["bins"]), metadata=meta
        )
    return metrics.build_report(
        states,
        pot,
        target=target,
        relax_max_iters=int(rep["relax_max_iters"]),
        relax_tol=float(rep["relax_tol"]),
        min_dist=float(rep["min_dist"]),
        validity_tol=float(rep["validity_tol"]),
        bins=int(rep["bins"]),
        metadata=meta,
    )


# fields that change where/how a run executes but not what it samples
_VOLATILE_KEYS = ("out", "jobs", "plots", "dump_xyz")


def _manifest(exp: dict, command: str) -> dict:
    identity = {k: v for k, v in exp.items() if k not in _VOLATILE_KEYS}
    manifest = {
        "command": command,
        "experiment": copy.deepcopy(exp),
        "schedule_hash": reporting.config_hash(exp["schedule"]),
        "oracle_hash": reporting.config_hash(
            {"oracle": exp["oracle"], "potential": exp["potential"], "atoms": exp["atoms"]}
        ),
    }
    manifest["config_hash"] = reporting.config_hash({"command": command, "experiment": identity})
    return manifest


def _execute_run(exp: dict, out_dir: Path) -> metrics.SampleReport:
    cfg, pot, labels = build_run_config(exp)
    states = _run_chains(cfg, int(exp["jobs"]))
    report = _build_report(states, exp, pot, labels)
    manifest = _manifest(exp, "sample")
    reporting.write_run(out_dir, report, manifest, figures=bool(exp["plots"]))
    if exp["dump_xyz"]:
        blocks = [
            write_xyz(labels, s.positions, comment=f"sample {i} config {manifest['config_hash']}")
            for i, s in enumerate(states)
        ]
        (out_dir / "samples.xyz").write_text("".join(blocks))
    return report


# --------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    exp = resolve_experiment(args.config, _overrides(args))
    out = Path(exp["out"])
    report = _execute_run(exp, out)
    agg = report.aggregates
    print(f"wrote {out} (n={agg['n_samples']}, force_rms_mean={agg['force_rms_mean']:.6g}, "
          f"valid={agg['valid_fraction']:.2%})")
    return 0


def cmd_sweep(args) -> int:
    exp = resolve_experiment(args.config, _overrides(args))
    if exp["mode"] in ("unguided",):
        exp["mode"] = "oracle"
    scales = args.scales or list(DEFAULT_SCALES)
    out = Path(exp["out"])

    base_exp = copy.deepcopy(exp)
    base_exp["mode"] = "unguided"
    base_exp["out"] = str(out / "unguided")
    base_report = _execute_run(base_exp, out / "unguided")

    metrics_by_scale = {}
    for scale in scales:
        arm = copy.deepcopy(exp)
        arm["guidance"]["scale"] = float(scale)
        arm["out"] = str(out / f"scale_{scale:g}")
        rep = _execute_run(arm, out / f"scale_{scale:g}")
        metrics_by_scale[scale] = rep.aggregates
        print(f"scale {scale:g}: force_rms_mean={rep.aggregates['force_rms_mean']:.6g}")

    manifest = _manifest(exp, "sweep")
    cfg_hash = manifest["config_hash"]
    lines = [f"# ogd sweep v{reporting.CSV_SCHEMA_VERSION}", f"# config: {cfg_hash}"]
    cols = ("scale", "force_rms_mean", "energy_above_gs_mean", "property_mae", "valid_fraction")
    lines.append(",".join(cols))

    def row(scale_label, agg):
        vals = [scale_label]
        for c in cols[1:]:
            v = agg.get(c, float("nan"))
            vals.append(repr(float(v)) if v is not None else "nan")
        return ",".join(str(v) for v in vals)

    lines.append(row("0", base_report.aggregates))
    for scale in scales:
        lines.append(row(f"{scale:g}", metrics_by_scale[scale]))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")

    summary = {
        "config_hash": cfg_hash,
        "scales": [float(s) for s in scales],
        "baseline": base_report.aggregates,
        "by_scale": {f"{s:g}": metrics_by_scale[s] for s in scales},
    }
    (out / "sweep_summary.yaml").write_text(yaml.safe_dump(reporting._canonical(summary), sort_keys=True))
    (out / "manifest.yaml").write_text(yaml.safe_dump(reporting._canonical(manifest), sort_keys=True))
    if exp["plots"]:
        plots.save_sweep_comparison(
            scales, metrics_by_scale, base_report.aggregates, out / "comparison.png", cfg_hash=cfg_hash
        )
    best = min(scales, key=lambda s: metrics_by_scale[s]["force_rms_mean"])
    print(f"best scale {best:g}: force_rms_mean={metrics_by_scale[best]['force_rms_mean']:.6g} "
          f"(unguided {base_report.aggregates['force_rms_mean']:.6g})")
    return 0


class _QuadraticObjective:
    """Bundled gradcheck fixture: F(x) = sum x^2 with exact gradient 2x."""

    def __call__(self, positions):
        pos = np.asarray(positions, dtype=np.float64)
        vals = np.sum(pos * pos, axis=(-2, -1))
        return vals, np.ones(vals.shape, dtype=bool)

    def gradient(self, positions):
        return 2.0 * np.asarray(positions, dtype=np.float64)


def cmd_gradcheck(args) -> int:
    exp = resolve_experiment(args.config, _overrides(args))
    out = Path(exp["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(exp["seed"]))
    n = int(exp["atoms"])

    if args.objective == "quadratic":
        quad = _QuadraticObjective()
        objective, gradient_fn = quad, quad.gradient
        states = [project_zero_cog(rng.standard_normal((n, 3))) for _ in range(args.states)]
    else:
        pot = build_potential(exp)
        if pot is None:
            raise ConfigError("gradcheck with the toy objective needs a potential")
        scal = exp["guidance"]["scalarization"]
        objective = lambda pos: objective_batch(pot, pos, scal)  # noqa: E731
        gradient_fn = lambda pos: objective_gradient(pot, pos, scal)  # noqa: E731
        base = _target_positions(exp["denoiser"].get("target", {}), n)
        states = [project_zero_cog(base + 0.15 * rng.standard_normal((n, 3))) for _ in range(args.states)]

    diag = metrics.spsa_cosine_diagnostic(
        objective, gradient_fn, states, args.probes, float(exp["guidance"]["zeta"]), rng
    )
    manifest = _manifest(exp, "gradcheck")
    cfg_hash = manifest["config_hash"]
    payload = {
        "config_hash": cfg_hash,
        "objective": args.objective,
        "n_states": len(states),
        "n_probes": int(args.probes),
        "zeta": float(exp["guidance"]["zeta"]),
        "mean_estimate_cosine": [float(c) for c in diag.mean_estimate_cosine],
        "relative_l2_error": [float(e) for e in diag.relative_l2_error],
        "worst_cosine": float(diag.worst_cosine),
        "worst_relative_error": float(diag.worst_relative_error),
        "degenerate_states": int(diag.degenerate.sum()),
    }
    (out / "gradcheck.yaml").write_text(yaml.safe_dump(payload, sort_keys=True))
    per_probe = diag.probe_cosines[~diag.degenerate]
    qs = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99]
    lines = [f"# ogd gradcheck v{reporting.CSV_SCHEMA_VERSION}", f"# config: {cfg_hash}", "quantile,cosine"]
    finite = per_probe[np.isfinite(per_probe)]
    for q in qs:
        lines.append(f"{q},{repr(float(np.quantile(finite, q))) if finite.size else 'nan'}")
    (out / "probe_cosine_quantiles.csv").write_text("\n".join(lines) + "\n")
    if exp["plots"]:
        plots.save_cosine_histogram(per_probe, out / "probe_cosines.png", cfg_hash=cfg_hash)
    print(f"mean-estimate cosine: worst {diag.worst_cosine:.4f}; "
          f"relative L2 error: worst {diag.worst_relative_error:.4%}")
    return 0


def cmd_relax(args) -> int:
    exp = resolve_experiment(args.config, _overrides(args))
    pot = build_potential(exp)
    if pot is None:
        raise ConfigError("relax needs a potential")
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"input file not found: {args.input}")
    structures = parse_xyz_many(src.read_text())
    out = Path(exp["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(exp, "relax")
    cfg_hash = manifest["config_hash"]

    rep = exp["report"]
    rows = ["# ogd relax v1", f"# config: {cfg_hash}",
            "index,initial_energy,final_energy,energy_above_gs,initial_force_rms,final_force_rms,converged,iterations"]
    blocks = []
    for idx, (labels, pos) in enumerate(structures):
        start = evaluate(pot, pos)
        res = relax(pot, pos, max_iters=int(rep["relax_max_iters"]), tol=float(rep["relax_tol"]))
        final = evaluate(pot, res.positions)
        rows.append(
            f"{idx},{start.energy!r},{res.energy!r},{start.energy - res.energy!r},"
            f"{float(force_rms_of(start.gradient))!r},{float(force_rms_of(final.gradient))!r},"
            f"{1 if res.converged else 0},{res.iterations}"
        )
        blocks.append(write_xyz(labels, res.positions, comment=f"relaxed {idx} config {cfg_hash}"))
    (out / "relax.csv").write_text("\n".join(rows) + "\n")
    (out / "relaxed.xyz").write_text("".join(blocks))
    (out / "manifest.yaml").write_text(yaml.safe_dump(reporting._canonical(manifest), sort_keys=True))
    print(f"relaxed {len(structures)} structures -> {out}")
    return 0


def cmd_report(args) -> int:
    run_dirs = [Path(p) for p in args.runs]
    for run in run_dirs:
        if not (run / "manifest.yaml").exists():
            raise ConfigError(f"not a run directory: {run}")
    loaded = [reporting.read_run(run) for run in run_dirs]
    reporting.check_mergeable([manifest for _, manifest in loaded])

    merged = []
    for records, _ in loaded:
        merged.extend(records)
    merged = [
        metrics.SampleRecord(i, r.force_rms, r.energy, r.energy_above_gs, r.property_value, r.valid)
        for i, r in enumerate(merged)
    ]
    target = None
    first_exp = loaded[0][1].get("experiment", {})
    if first_exp.get("guidance", {}).get("target") is not None:
        target = float(first_exp["guidance"]["target"])
    report = metrics.report_from_records(
        merged,
        target=target,
        bins=int(first_exp.get("report", {}).get("bins", 50)),
        metadata={"merged_from": [str(r) for r in run_dirs]},
    )
    manifest = {
        "command": "report",
        "sources": [str(r) for r in run_dirs],
        "schedule_hash": loaded[0][1].get("schedule_hash"),
        "oracle_hash": loaded[0][1].get("oracle_hash"),
    }
    manifest["config_hash"] = reporting.config_hash(manifest)
    out = Path(args.out)
    reporting.write_run(out, report, manifest, figures=not args.no_plots)
    print(f"merged {len(run_dirs)} runs ({len(merged)} samples) -> {out}")
    return 0


# --------------------------------------------------------------------------
# argument plumbing


def _overrides(args) -> dict:
    """Flag values that were actually provided, shaped like the config tree."""
    out: dict = {}

    def put(path, value):
        if value is None:
            return
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    put(("mode",), getattr(args, "mode", None))
    put(("n",), getattr(args, "n", None))
    put(("atoms",), getattr(args, "atoms", None))
    put(("seed",), getattr(args, "seed", None))
    put(("jobs",), getattr(args, "jobs", None))
    put(("oracle",), getattr(args, "oracle", None))
    put(("out",), getattr(args, "out", None))
    put(("schedule", "steps"), getattr(args, "steps", None))
    put(("guidance", "scale"), getattr(args, "scale", None))
    put(("guidance", "zeta"), getattr(args, "zeta", None))
    put(("guidance", "window"), getattr(args, "window", None))
    put(("guidance", "skip"), getattr(args, "skip", None))
    put(("guidance", "clean_steps"), getattr(args, "clean_steps", None))
    put(("guidance", "clean_lr"), getattr(args, "clean_lr", None))
    put(("guidance", "target"), getattr(args, "target", None))
    put(("guidance", "oracle_scale"), getattr(args, "oracle_scale", None))
    put(("guidance", "probes"), getattr(args, "probes_cfg", None))
    if getattr(args, "dump_xyz", False):
        put(("dump_xyz",), True)
    if getattr(args, "no_plots", False):
        put(("plots",), False)
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML experiment file; flags override its values")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--scale", type=float, help="guidance scale s")
    p.add_argument("--zeta", type=float, help="SPSA perturbation scale")
    p.add_argument("--window", type=int, help="guide when t <= window")
    p.add_argument("--skip", type=int, help="guide every k-th step")
    p.add_argument("--clean-steps", dest="clean_steps", type=int)
    p.add_argument("--clean-lr", dest="clean_lr", type=float)
    p.add_argument("--target", type=float, help="property target y")
    p.add_argument("--oracle-scale", dest="oracle_scale", type=float)
    p.add_argument("--spsa-probes", dest="probes_cfg", type=int,
                   help="probe matrices averaged per guidance step")
    p.add_argument("--n", type=int, help="number of chains")
    p.add_argument("--atoms", type=int)
    p.add_argument("--steps", type=int, help="diffusion steps T")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--oracle", choices=("toy", "xtb"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ogd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one sampling mode and write a report")
    _add_common(p)
    p.add_argument("--dump-xyz", dest="dump_xyz", action="store_true")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("sweep", help="guidance-scale sweep with an unguided baseline")
    _add_common(p)
    p.add_argument("--scales", type=lambda s: [float(x) for x in s.split(",")],
                   help="comma-separated scale grid (default 1e-4..1)")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="SPSA estimator quality diagnostics")
    _add_common(p)
    p.add_argument("--probes", type=int, default=100_000)
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--objective", choices=("quadratic", "toy"), default="quadratic")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("relax", help="batch-relax structures from an XYZ file")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="XYZ file (may hold many blocks)")
    p.set_defaults(fn=cmd_relax)

    p = sub.add_parser("report", help="re-aggregate saved runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
