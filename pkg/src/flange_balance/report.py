"""
CSV and JSON writers for analyses and optimization results.

Every file is written with a fixed column order and shortest round-trip float
formatting so identical inputs give byte-identical files. Units live in the
column names; angles are degrees in CSV tables and radians in JSON.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .jointmodel import BoltSpec, GasketStressField, OptimizationResult
from .solver import AnalysisState, JointLayout


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "0.0" if x == 0 else repr(x)
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def deg(rad):
    # rounded so 247.49999999999997 prints as 247.5
    return np.round(np.degrees(np.asarray(rad, dtype=float)), 9)


def dump_field(path, layout: JointLayout, fld: GasketStressField) -> Path:
    """Per-station external-radius closure, stress and contact flag."""
    ext = fld.closures[:, -1]
    rows = [
        (k, deg(a), a, c, s, f)
        for k, (a, c, s, f) in enumerate(zip(fld.sector_angles, ext, fld.stress_per_sector, fld.contact_flags))
    ]
    return write_csv(path, ["station", "angle_deg", "angle_rad", "closure_m", "stress_Pa", "contact"], rows)


def dump_bolts(path, layout: JointLayout, state: AnalysisState, bolts: Optional[BoltSpec] = None) -> Path:
    rows = []
    for i, (a, P, F, lock) in enumerate(zip(layout.bolt_angles, state.preloads, state.bolt_forces, state.lock_lengths)):
        rows.append((i + 1, deg(a), P, F, lock, layout.sector_weights[i] @ state.field.stress_per_sector))
    return write_csv(path, ["bolt", "angle_deg", "preload_N", "bolt_force_N", "lock_length_m", "GS_Pa"], rows)


def result_to_dict(result: OptimizationResult, layout: JointLayout, bolts: Optional[BoltSpec] = None) -> dict:
    d = {
        "target_stress_Pa": result.target_stress,
        "tolerance": result.tolerance,
        "converged": result.converged,
        "iterations": result.iterations,
        "bolt_angles_rad": layout.bolt_angles,
        "nominal_preloads_N": result.nominal_preloads,
        "final_preloads_N": result.final_preloads,
        "percent_variation": result.percent_variation,
        "history": [
            {
                "iteration": j,
                "stage": rec.stage,
                "preloads_N": rec.preloads,
                "GS_Pa": rec.field.stress_at_external_radius,
                "max_relative_error": rec.max_relative_error,
                "lost_contact_stations": rec.field.lost_contact_count,
                "events": [list(e) for e in rec.events],
            }
            for j, rec in enumerate(result.history)
        ],
    }
    if bolts is not None and bolts.preload_as_stress:
        d["nominal_preloads_Pa"] = bolts.from_force(result.nominal_preloads)
        d["final_preloads_Pa"] = bolts.from_force(result.final_preloads)
    return d


def write_result(out_dir, result: OptimizationResult, layout: JointLayout, bolts: Optional[BoltSpec] = None) -> list[Path]:
    out_dir = Path(out_dir)
    files = [write_json(out_dir / "result.json", result_to_dict(result, layout, bolts))]

    header = ["bolt", "angle_deg", "preload_N"]
    stress = bolts is not None and bolts.preload_as_stress
    if stress:
        header.append("preload_Pa")
    header.append("variation_pct")
    rows = []
    for i, (a, P, v) in enumerate(zip(layout.bolt_angles, result.final_preloads, result.percent_variation)):
        row = [i + 1, deg(a), P]
        if stress:
            row.append(float(bolts.from_force(P)))
        row.append(v)
        rows.append(row)
    files.append(write_csv(out_dir / "preloads.csv", header, rows))

    rows = []
    for j, rec in enumerate(result.history):
        gs = rec.field.stress_at_external_radius
        for i, (P, g) in enumerate(zip(rec.preloads, gs)):
            rows.append((j, rec.stage, i + 1, P, g, abs(g - result.target_stress) / result.target_stress))
    files.append(write_csv(
        out_dir / "iterations.csv", ["iteration", "stage", "bolt", "preload_N", "GS_Pa", "rel_error"], rows
    ))
    return files


def emit_plots(out_dir, result: OptimizationResult, layout: JointLayout,
               loaded_uniform: Optional[GasketStressField] = None) -> list[Path]:
    """
    Plot-ready CSV files.

    * field_polar.csv - stress over (station, radius) for each recorded analysis
    * external_radius_profile.csv - per-station external-radius stress for the
      ideal, loaded-uniform and optimized states
    * external_radius_sectors.csv - the same, aggregated per bolt sector
    * convergence.csv - per-analysis min/mean/max sector stress with the band
    """
    out_dir = Path(out_dir)
    files = []
    r = layout.radial_nodes

    rows = []
    for j, rec in enumerate(result.history):
        c = rec.field.closures
        s = layout.gasket.stress(c)
        for k, a in enumerate(rec.field.sector_angles):
            for q, rad in enumerate(r):
                rows.append((j, rec.stage, k, deg(a), rad, c[k, q], s[k, q]))
    files.append(write_csv(
        out_dir / "field_polar.csv",
        ["iteration", "stage", "station", "angle_deg", "radius_m", "closure_m", "stress_Pa"], rows,
    ))

    ideal = result.history[0].field
    final = result.history[-1].field
    loaded = loaded_uniform
    header = ["station", "angle_deg", "ideal_Pa"] + (["loaded_uniform_Pa"] if loaded is not None else []) + ["optimized_Pa"]
    rows = []
    for k, a in enumerate(ideal.sector_angles):
        row = [k, deg(a), ideal.stress_per_sector[k]]
        if loaded is not None:
            row.append(loaded.stress_per_sector[k])
        row.append(final.stress_per_sector[k])
        rows.append(row)
    files.append(write_csv(out_dir / "external_radius_profile.csv", header, rows))

    header[0] = "bolt"
    rows = []
    for i, a in enumerate(layout.bolt_angles):
        row = [i + 1, deg(a), ideal.stress_at_external_radius[i]]
        if loaded is not None:
            row.append(loaded.stress_at_external_radius[i])
        row.append(final.stress_at_external_radius[i])
        rows.append(row)
    files.append(write_csv(out_dir / "external_radius_sectors.csv", header, rows))

    T, tol = result.target_stress, result.tolerance
    rows = []
    for j, rec in enumerate(result.history):
        gs = rec.field.stress_at_external_radius
        st = rec.field.stress_per_sector
        rows.append((j, rec.stage, gs.min(), gs.mean(), gs.max(), st.min(), st.max(), T, (1 - tol) * T, (1 + tol) * T))
    files.append(write_csv(
        out_dir / "convergence.csv",
        ["iteration", "stage", "min_sector_Pa", "mean_sector_Pa", "max_sector_Pa",
         "min_station_Pa", "max_station_Pa", "target_Pa", "band_low_Pa", "band_high_Pa"],
        rows,
    ))
    return files
