"""
Domain types for a gasketed bolted flange joint.

Everything here is a plain value object: geometry, materials, loads and the
result containers produced by the solver and optimizer. Nothing in this module
solves anything.

Units are SI throughout (m, N, Pa, rad). Preloads are carried internally as
forces; stress-denominated input/output converts through ``BoltSpec``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class FlangeRingSection:
    radial_width: float
    axial_thickness: float


@dataclass(frozen=True)
class JointGeometry:
    """
    Geometric description of the flange joint.

    Attributes:
        n_bolts: Number of bolts
        bolt_circle_radius: Bolt circle radius R [m]
        bolt_angles: Angular position of each bolt [rad]; defaults to
            (2i-1)*pi/n_bolts, i.e. 22.5, 67.5, ... deg for eight bolts
        gasket_inner_radius, gasket_outer_radius: Gasket annulus [m]
        gasket_reaction_radius: Radius where the gasket_contact DOF sits [m]
        flange_ring_section: Cross-section of the flange ring
        pipe_attachment_radius: Radius where the pipe wall meets the ring [m]
        n_sectors: Circumferential stations, a multiple of n_bolts
    """

    n_bolts: int
    bolt_circle_radius: float
    gasket_inner_radius: float
    gasket_outer_radius: float
    gasket_reaction_radius: float
    flange_ring_section: FlangeRingSection
    pipe_attachment_radius: float
    n_sectors: int
    bolt_angles: tuple = ()

    def __post_init__(self):
        if not self.bolt_angles and self.n_bolts > 0:
            angles = tuple((2 * i - 1) * math.pi / self.n_bolts for i in range(1, self.n_bolts + 1))
            object.__setattr__(self, "bolt_angles", angles)
        else:
            object.__setattr__(self, "bolt_angles", tuple(float(a) for a in self.bolt_angles))

    @property
    def ring_inner_radius(self) -> float:
        return self.pipe_attachment_radius

    @property
    def ring_centroid_radius(self) -> float:
        return self.pipe_attachment_radius + 0.5 * self.flange_ring_section.radial_width

    @property
    def station_angles(self) -> np.ndarray:
        """Equally spaced station angles, anchored on the first bolt."""
        step = 2 * math.pi / self.n_sectors
        start = self.bolt_angles[0] if self.bolt_angles else 0.0
        return start + step * np.arange(self.n_sectors)

    @property
    def gasket_area(self) -> float:
        return math.pi * (self.gasket_outer_radius**2 - self.gasket_inner_radius**2)


@dataclass(frozen=True)
class BoltSpec:
    nominal_area: float
    stiffness: float
    preload_as_stress: bool = True

    def to_force(self, values):
        """Convert preloads given in the reporting unit to forces [N]."""
        values = np.asarray(values, dtype=float)
        return values * self.nominal_area if self.preload_as_stress else values

    def from_force(self, forces):
        forces = np.asarray(forces, dtype=float)
        return forces / self.nominal_area if self.preload_as_stress else forces


@dataclass(frozen=True)
class FlangeMaterial:
    youngs_modulus: float = 200e9
    poisson_ratio: float = 0.3

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2 * (1 + self.poisson_ratio))


@dataclass(frozen=True)
class PipeSpec:
    """Pipe wall linking the flange ring to the remote load node."""

    wall_thickness: float
    length: float


class GasketCurve:
    """
    Tabulated gasket compression curve, stress as a function of closure.

    The curve is compression-only: closures at or below zero carry no stress.
    Beyond the last tabulated point the last segment is extended linearly.
    Loading and unloading share the same curve.
    """

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        self.closures = pts[:, 0].copy()
        self.stresses = pts[:, 1].copy()
        self.closures.flags.writeable = False
        self.stresses.flags.writeable = False

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(float(c), float(s)) for c, s in zip(self.closures, self.stresses)]

    def __repr__(self):
        return f"GasketCurve({self.points!r})"

    def __eq__(self, other):
        if not isinstance(other, GasketCurve):
            return NotImplemented
        return np.array_equal(self.closures, other.closures) and np.array_equal(self.stresses, other.stresses)

    def __hash__(self):
        return hash((self.closures.tobytes(), self.stresses.tobytes()))

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.stresses) / np.diff(self.closures)

    def _segment(self, closure):
        # side="right" puts an exact breakpoint on the segment to its right
        idx = np.searchsorted(self.closures, closure, side="right") - 1
        return np.clip(idx, 0, len(self.closures) - 2)

    def stress(self, closure):
        """Vectorised stress evaluation; returns an array shaped like ``closure``."""
        c = np.asarray(closure, dtype=float)
        seg = self._segment(c)
        s = self.stresses[seg] + self.slopes[seg] * (c - self.closures[seg])
        return np.where(c > 0.0, s, 0.0)

    def tangent(self, closure):
        c = np.asarray(closure, dtype=float)
        seg = self._segment(c)
        return np.where(c >= 0.0, self.slopes[seg], 0.0)

    def is_extrapolated(self, closure):
        return np.asarray(closure, dtype=float) > self.closures[-1]

    def scaled(self, stress_factor: float) -> "GasketCurve":
        return GasketCurve(np.column_stack([self.closures, self.stresses * stress_factor]))

    @classmethod
    def linear(cls, closure: float, stress: float) -> "GasketCurve":
        return cls([(0.0, 0.0), (closure, stress)])

    @classmethod
    def from_csv(cls, path) -> "GasketCurve":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(reader.fieldnames) != {"closure_m", "stress_Pa"}:
                raise ValueError(f"{path}: expected header 'closure_m,stress_Pa', got {reader.fieldnames}")
            rows = [(float(r["closure_m"]), float(r["stress_Pa"])) for r in reader]
        return cls(rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("closure_m,stress_Pa\n")
            for c, s in self.points:
                fh.write(f"{c!r},{s!r}\n")


def gasket_stress(curve: GasketCurve, closure: float) -> float:
    """Gasket contact stress [Pa] at a given closure [m]."""
    return float(curve.stress(closure))


def gasket_tangent(curve: GasketCurve, closure: float) -> float:
    """Slope d(stress)/d(closure) [Pa/m]; right-segment slope at breakpoints."""
    return float(curve.tangent(closure))


@dataclass(frozen=True)
class JointModel:
    """Single source of truth for a joint: geometry plus all materials."""

    geometry: JointGeometry
    bolts: BoltSpec
    gasket: GasketCurve
    pipe: PipeSpec
    flange: FlangeMaterial = field(default_factory=FlangeMaterial)
    name: str = "joint"

    def with_sectors(self, n_sectors: int) -> "JointModel":
        from dataclasses import replace

        return replace(self, geometry=replace(self.geometry, n_sectors=n_sectors))


@dataclass(frozen=True)
class LoadCase:
    """
    Bolt-up preloads plus external axial force and bending moment.

    ``preloads`` are in the unit selected by ``BoltSpec.preload_as_stress``.
    A positive axial load pulls the pipe away from the gasket. The moment
    lifts the side of the joint at ``moment_plane_angle``.
    """

    preloads: tuple
    axial_load: float = 0.0
    bending_moment: float = 0.0
    moment_plane_angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "preloads", tuple(float(p) for p in self.preloads))

    def preload_forces(self, bolts: BoltSpec) -> np.ndarray:
        return bolts.to_force(self.preloads)


@dataclass(frozen=True)
class RigidityFactor:
    """Correction rigidity factor applied to the moment term of the compensation rule."""

    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"rigidity factor must be positive, got {self.value}")

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class GasketStressField:
    """
    Gasket stress state at the external radius.

    ``stress_per_sector`` holds one value per circumferential station;
    ``stress_at_external_radius`` aggregates those per bolt sector.
    """

    sector_angles: np.ndarray
    stress_per_sector: np.ndarray
    stress_at_external_radius: np.ndarray
    contact_flags: np.ndarray
    closures: Optional[np.ndarray] = None
    extrapolated: bool = False

    @property
    def lost_contact_count(self) -> int:
        return int(np.count_nonzero(~self.contact_flags))


@dataclass
class IterationRecord:
    stage: str
    preloads: np.ndarray
    field: GasketStressField
    max_relative_error: float
    bolt_forces: Optional[np.ndarray] = None
    events: list = field(default_factory=list)


@dataclass
class OptimizationResult:
    target_stress: float
    nominal_preloads: np.ndarray
    final_preloads: np.ndarray
    iterations: int
    history: list
    converged: bool
    tolerance: float

    @property
    def percent_variation(self) -> np.ndarray:
        return 100.0 * (self.final_preloads - self.nominal_preloads) / self.nominal_preloads

    @property
    def final_field(self) -> GasketStressField:
        return self.history[-1].field


def _fmt_violation(field_name: str, rule: str) -> str:
    return f"{field_name}: {rule}"


def validate_curve(curve: GasketCurve, prefix: str = "gasket") -> list[str]:
    out = []
    c, s = curve.closures, curve.stresses
    if len(c) < 2:
        out.append(_fmt_violation(f"{prefix}.points", "at least 2 points required"))
        return out
    if c[0] != 0.0 or s[0] != 0.0:
        out.append(_fmt_violation(f"{prefix}.points", "first point must be (0, 0)"))
    if np.any(np.diff(c) <= 0):
        out.append(_fmt_violation(f"{prefix}.closure", "closures must be strictly increasing"))
    if np.any(np.diff(s) < 0):
        out.append(_fmt_violation(f"{prefix}.stress", "stresses must be non-decreasing"))
    return out


def validate(model: JointModel) -> list[str]:
    """Return one human-readable entry per violated invariant (empty if valid)."""
    g = model.geometry
    out = []
    if g.n_bolts < 2:
        out.append(_fmt_violation("geometry.n_bolts", "n_bolts must be >= 2"))
    if len(g.bolt_angles) != g.n_bolts:
        out.append(_fmt_violation("geometry.bolt_angles", "length must equal n_bolts"))
    angles = np.asarray(g.bolt_angles, dtype=float)
    if angles.size and (np.any(np.diff(angles) <= 0) or angles[0] < 0 or angles[-1] >= 2 * math.pi):
        out.append(_fmt_violation("geometry.bolt_angles", "angles must be strictly increasing in [0, 2*pi)"))
    if not (0 < g.gasket_inner_radius < g.gasket_reaction_radius <= g.gasket_outer_radius < g.bolt_circle_radius):
        out.append(_fmt_violation(
            "geometry.radii",
            "require 0 < gasket_inner_radius < gasket_reaction_radius <= gasket_outer_radius < bolt_circle_radius",
        ))
    if g.n_sectors <= 0 or g.n_bolts <= 0 or g.n_sectors % g.n_bolts != 0:
        out.append(_fmt_violation("geometry.n_sectors", "n_sectors must be a positive multiple of n_bolts"))
    elif g.n_sectors >= 3 and angles.size == g.n_bolts:
        step = 2 * math.pi / g.n_sectors
        offsets = (angles - angles[0]) / step
        if np.any(np.abs(offsets - np.round(offsets)) > 1e-9):
            out.append(_fmt_violation("geometry.bolt_angles", "every bolt must sit on a circumferential station"))
    sec = g.flange_ring_section
    if not sec.radial_width > 0:
        out.append(_fmt_violation("geometry.flange_ring_section.radial_width", "must be > 0"))
    if not sec.axial_thickness > 0:
        out.append(_fmt_violation("geometry.flange_ring_section.axial_thickness", "must be > 0"))
    if not 0 < g.pipe_attachment_radius < g.bolt_circle_radius:
        out.append(_fmt_violation("geometry.pipe_attachment_radius", "must lie in (0, bolt_circle_radius)"))
    if not model.bolts.nominal_area > 0:
        out.append(_fmt_violation("bolts.nominal_area", "must be > 0"))
    if not model.bolts.stiffness > 0:
        out.append(_fmt_violation("bolts.stiffness", "must be > 0"))
    if not model.flange.youngs_modulus > 0:
        out.append(_fmt_violation("flange.youngs_modulus", "must be > 0"))
    if not -1.0 < model.flange.poisson_ratio < 0.5:
        out.append(_fmt_violation("flange.poisson_ratio", "must lie in (-1, 0.5)"))
    if not model.pipe.wall_thickness > 0:
        out.append(_fmt_violation("pipe.wall_thickness", "must be > 0"))
    if not model.pipe.length > 0:
        out.append(_fmt_violation("pipe.length", "must be > 0"))
    out.extend(validate_curve(model.gasket))
    return out


def validate_loadcase(model: JointModel, loads: LoadCase) -> list[str]:
    out = []
    if len(loads.preloads) != model.geometry.n_bolts:
        out.append(_fmt_violation("load_case.preloads", "length must equal n_bolts"))
    if any(p < 0 for p in loads.preloads):
        out.append(_fmt_violation("load_case.preloads", "preloads must be >= 0"))
    return out


# --- JSON / CSV interchange -------------------------------------------------


def model_to_dict(model: JointModel) -> dict:
    g = model.geometry
    d = {
        "name": model.name,
        "geometry": {
            "n_bolts": g.n_bolts,
            "bolt_circle_radius": g.bolt_circle_radius,
            "bolt_angles": list(g.bolt_angles),
            "gasket_inner_radius": g.gasket_inner_radius,
            "gasket_outer_radius": g.gasket_outer_radius,
            "gasket_reaction_radius": g.gasket_reaction_radius,
            "flange_ring_section": {
                "radial_width": g.flange_ring_section.radial_width,
                "axial_thickness": g.flange_ring_section.axial_thickness,
            },
            "pipe_attachment_radius": g.pipe_attachment_radius,
            "n_sectors": g.n_sectors,
        },
        "bolts": {
            "nominal_area": model.bolts.nominal_area,
            "stiffness": model.bolts.stiffness,
            "preload_as_stress": model.bolts.preload_as_stress,
        },
        "flange": {
            "youngs_modulus": model.flange.youngs_modulus,
            "poisson_ratio": model.flange.poisson_ratio,
        },
        "pipe": {"wall_thickness": model.pipe.wall_thickness, "length": model.pipe.length},
        "gasket": {"points": [list(p) for p in model.gasket.points]},
    }
    return d


def model_from_dict(d: dict, base_dir=None, gasket: Optional[GasketCurve] = None) -> JointModel:
    g = d["geometry"]
    sec = g["flange_ring_section"]
    geometry = JointGeometry(
        n_bolts=int(g["n_bolts"]),
        bolt_circle_radius=float(g["bolt_circle_radius"]),
        bolt_angles=tuple(g.get("bolt_angles") or ()),
        gasket_inner_radius=float(g["gasket_inner_radius"]),
        gasket_outer_radius=float(g["gasket_outer_radius"]),
        gasket_reaction_radius=float(g["gasket_reaction_radius"]),
        flange_ring_section=FlangeRingSection(float(sec["radial_width"]), float(sec["axial_thickness"])),
        pipe_attachment_radius=float(g["pipe_attachment_radius"]),
        n_sectors=int(g["n_sectors"]),
    )
    b = d["bolts"]
    bolts = BoltSpec(float(b["nominal_area"]), float(b["stiffness"]), bool(b.get("preload_as_stress", True)))
    flange = FlangeMaterial(**{k: float(v) for k, v in d.get("flange", {}).items()})
    pipe = PipeSpec(float(d["pipe"]["wall_thickness"]), float(d["pipe"]["length"]))
    if gasket is None:
        gd = d.get("gasket")
        if gd is None:
            raise ValueError("model has no gasket curve; supply one")
        if "points" in gd:
            gasket = GasketCurve(gd["points"])
        else:
            path = Path(gd["csv"])
            if not path.is_absolute() and base_dir is not None:
                path = Path(base_dir) / path
            gasket = GasketCurve.from_csv(path)
    return JointModel(geometry, bolts, gasket, pipe, flange, d.get("name", "joint"))


def loadcase_to_dict(loads: LoadCase) -> dict:
    return {
        "preloads": list(loads.preloads),
        "axial_load": loads.axial_load,
        "bending_moment": loads.bending_moment,
        "moment_plane_angle": loads.moment_plane_angle,
    }


def loadcase_from_dict(d: dict, n_bolts: Optional[int] = None) -> LoadCase:
    preloads = d["preloads"]
    if not isinstance(preloads, (list, tuple)):
        if n_bolts is None:
            raise ValueError("a scalar preload needs n_bolts to expand")
        preloads = [float(preloads)] * n_bolts
    return LoadCase(
        preloads=tuple(preloads),
        axial_load=float(d.get("axial_load", 0.0)),
        bending_moment=float(d.get("bending_moment", 0.0)),
        moment_plane_angle=float(d.get("moment_plane_angle", 0.0)),
    )


def load_document(path, gasket_path=None) -> tuple[JointModel, Optional[LoadCase]]:
    """Read a joint JSON document, optionally holding a ``load_case`` section."""
    path = Path(path)
    with open(path) as fh:
        d = json.load(fh)
    gasket = GasketCurve.from_csv(gasket_path) if gasket_path else None
    model = model_from_dict(d, base_dir=path.parent, gasket=gasket)
    loads = None
    if "load_case" in d:
        loads = loadcase_from_dict(d["load_case"], model.geometry.n_bolts)
    return model, loads
