"""Run artifacts: manifest, per-sample CSV, summary, histogram CSVs.

Output bytes are a pure function of the resolved configuration: floats are
written with shortest-round-trip repr, keys are sorted, and nothing
time-dependent is recorded.  Every file embeds the run's config hash; the
schedule and oracle sections carry their own sub-hashes so re-aggregation
can refuse to merge runs that were sampled under different dynamics.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np
import yaml

from .metrics import Histogram, SampleRecord, SampleReport

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("index", "force_rms", "energy", "energy_above_gs", "property_value", "valid")


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON form, truncated for readability."""
    text = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def samples_csv_text(records, cfg_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# ogd samples v{CSV_SCHEMA_VERSION}\n")
    buf.write(f"# config: {cfg_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(
            [r.index, _fmt(r.force_rms), _fmt(r.energy), _fmt(r.energy_above_gs),
             _fmt(r.property_value), _fmt(r.valid)]
        )
    return buf.getvalue()


def parse_samples_csv(text: str) -> tuple[list[SampleRecord], str]:
    lines = text.splitlines()
    cfg_hash = ""
    body = []
    for ln in lines:
        if ln.startswith("# config:"):
            cfg_hash = ln.split(":", 1)[1].strip()
        elif not ln.startswith("#"):
            body.append(ln)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns: {header}")
    records = []
    for row in reader:
        if not row:
            continue
        records.append(
            SampleRecord(
                index=int(row[0]),
                force_rms=float(row[1]),
                energy=float(row[2]),
                energy_above_gs=float(row[3]),
                property_value=float(row[4]),
                valid=row[5] == "1",
            )
        )
    return records, cfg_hash


def histogram_csv_text(hist: Histogram, cfg_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# ogd histogram v{CSV_SCHEMA_VERSION}\n")
    buf.write(f"# config: {cfg_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("bin_center", "count"))
    for center, count in zip(hist.centers, hist.counts):
        writer.writerow((_fmt(float(center)), int(count)))
    return buf.getvalue()


def _yaml_text(payload: dict) -> str:
    return yaml.safe_dump(_canonical(payload), sort_keys=True, default_flow_style=False)


def write_run(
    out_dir: str | Path,
    report: SampleReport,
    manifest: dict,
    *,
    figures: bool = True,
) -> Path:
    """Persist one run directory; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = manifest.get("config_hash") or config_hash(manifest)
    manifest = dict(manifest)
    manifest["config_hash"] = cfg_hash

    (out / "manifest.yaml").write_text(_yaml_text(manifest))
    (out / "samples.csv").write_text(samples_csv_text(report.records, cfg_hash))

    summary = {
        "config_hash": cfg_hash,
        "aggregates": report.aggregates,
        "metadata": report.metadata,
        "histogram_edges": {name: h.edges.tolist() for name, h in report.histograms.items()},
    }
    (out / "summary.yaml").write_text(_yaml_text(summary))

    for name, hist in report.histograms.items():
        (out / f"hist_{name}.csv").write_text(histogram_csv_text(hist, cfg_hash))

    if figures:
        from . import plots

        for name, hist in report.histograms.items():
            plots.save_histogram(hist, out / f"hist_{name}.png", xlabel=name, cfg_hash=cfg_hash)
    return out


def read_run(run_dir: str | Path) -> tuple[list[SampleRecord], dict]:
    run = Path(run_dir)
    manifest = yaml.safe_load((run / "manifest.yaml").read_text())
    records, cfg_hash = parse_samples_csv((run / "samples.csv").read_text())
    if manifest.get("config_hash") != cfg_hash:
        raise ValueError(f"{run}: manifest and samples.csv disagree on the config hash")
    return records, manifest


def check_mergeable(manifests: list[dict]) -> None:
    """Refuse to merge runs sampled under different schedules or oracles."""
    if not manifests:
        raise ValueError("nothing to merge")
    first = manifests[0]
    for m in manifests[1:]:
        for key in ("schedule_hash", "oracle_hash"):
            if m.get(key) != first.get(key):
                raise ValueError(
                    f"refusing to merge: {key} differs "
                    f"({m.get(key)} vs {first.get(key)})"
                )
