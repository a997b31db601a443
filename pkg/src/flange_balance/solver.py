"""
Nonlinear static analysis of the condensed joint with gasket and bolt pretension.

Two load steps, as done with commercial pretension elements:

1. ``apply_pretension`` - bolt_top DOFs are force controlled with the
   commanded preloads; the resulting bolt_top displacement defines each
   bolt's lock length.
2. ``apply_external`` - lock lengths are frozen (bolt_top DOFs prescribed)
   and the axial force and bending moment act on the remote node. Bolt
   forces change; gasket stations may lose contact.

The gasket acts on each station through its contact DOF ``g`` (at the
reaction radius ``G``) and, when present in the master set, the ring
meridional rotation ``phi``. Closure at radius ``r`` is
``-(g - (r - G) * phi)``; stresses are integrated across the gasket width
with nodal trapezoid weights so the outermost node is the external radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .jointmodel import GasketCurve, GasketStressField, JointModel
from .structure import DofMap
from .superelement import Superelement

DEFAULT_TOL = 1e-10
DEFAULT_MAX_NEWTON = 50


class SolverError(RuntimeError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, message, residual_history=None, contact_flags=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])
        self.contact_flags = contact_flags


class ModelInconsistencyError(SolverError):
    pass


def _wrap(x):
    return (x + math.pi) % (2 * math.pi) - math.pi


def sector_weights(bolt_angles, station_angles) -> np.ndarray:
    """
    Row-normalised weights averaging station values over each bolt's sector.

    A bolt's sector runs from the angular midpoint with its previous
    neighbour to the midpoint with its next one; each station contributes
    in proportion to the overlap of its tributary arc with the sector.
    """
    bolts = np.asarray(bolt_angles, dtype=float)
    stations = np.asarray(station_angles, dtype=float)
    n_b, n_s = len(bolts), len(stations)
    half = math.pi / n_s
    W = np.zeros((n_b, n_s))
    for i in range(n_b):
        if n_b == 1:
            left = right = math.pi
        else:
            left = 0.5 * (_wrap(bolts[i] - bolts[i - 1]) % (2 * math.pi))
            right = 0.5 * (_wrap(bolts[(i + 1) % n_b] - bolts[i]) % (2 * math.pi))
        for k in range(n_s):
            d = _wrap(stations[k] - bolts[i])
            total = 0.0
            for shift in (-2 * math.pi, 0.0, 2 * math.pi):
                lo = max(d + shift - half, -left)
                hi = min(d + shift + half, right)
                total += max(hi - lo, 0.0)
            W[i, k] = total
    return W / W.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class JointLayout:
    """
    Where the joint's physical features sit within the superelement's masters.

    DOF indices refer to master ordering; -1 marks an absent DOF.
    """

    gasket: GasketCurve
    station_angles: np.ndarray
    gasket_dofs: np.ndarray
    rotation_dofs: np.ndarray
    bolt_dofs: np.ndarray
    bolt_angles: np.ndarray
    bolt_circle_radius: float
    remote_dofs: tuple
    radial_nodes: np.ndarray
    area_weights: np.ndarray
    reaction_radius: float
    closure_operator: np.ndarray
    sector_weights: np.ndarray

    @property
    def n_stations(self) -> int:
        return len(self.station_angles)

    @property
    def n_bolts(self) -> int:
        return len(self.bolt_dofs)

    @property
    def external_radius(self) -> float:
        return float(self.radial_nodes[-1])

    @classmethod
    def build(
        cls,
        gasket: GasketCurve,
        master_dofmap: DofMap,
        station_angles,
        bolt_angles,
        bolt_circle_radius: float,
        inner_radius: float,
        outer_radius: float,
        reaction_radius: float,
        n_radial: int = 5,
    ) -> "JointLayout":
        station_angles = np.asarray(station_angles, dtype=float)
        n_s = len(station_angles)
        n_m = len(master_dofmap)
        gasket_dofs = np.array([master_dofmap.index("gasket_contact", k) for k in range(n_s)], dtype=int)
        rotation_dofs = np.array(
            [master_dofmap.find("ring_station", k, "meridional_rotation") for k in range(n_s)], dtype=object
        )
        rotation_dofs = np.array([-1 if r is None else r for r in rotation_dofs], dtype=int)
        bolt_angles = np.asarray(bolt_angles, dtype=float)
        bolt_dofs = np.array([master_dofmap.index("bolt_top", i) for i in range(len(bolt_angles))], dtype=int)
        remote = tuple(
            -1 if (j := master_dofmap.find("remote_load", 0, kind)) is None else j
            for kind in ("axial_translation", "rotation_x", "rotation_y")
        )

        r = np.linspace(inner_radius, outer_radius, n_radial)
        trap = np.full(n_radial, r[1] - r[0]) if n_radial > 1 else np.array([outer_radius - inner_radius])
        if n_radial > 1:
            trap[0] *= 0.5
            trap[-1] *= 0.5
        # exact annulus area per station for the linear-in-r integrand
        area = trap * r * (2 * math.pi / n_s)
        if n_radial == 1:
            area = np.array([math.pi * (outer_radius**2 - inner_radius**2) / n_s])

        C = np.zeros((n_s * n_radial, n_m))
        for k in range(n_s):
            rows = slice(k * n_radial, (k + 1) * n_radial)
            C[rows, gasket_dofs[k]] = -1.0
            if rotation_dofs[k] >= 0:
                C[rows, rotation_dofs[k]] = r - reaction_radius
        C.flags.writeable = False

        return cls(
            gasket=gasket,
            station_angles=station_angles,
            gasket_dofs=gasket_dofs,
            rotation_dofs=rotation_dofs,
            bolt_dofs=bolt_dofs,
            bolt_angles=bolt_angles,
            bolt_circle_radius=float(bolt_circle_radius),
            remote_dofs=remote,
            radial_nodes=r,
            area_weights=area,
            reaction_radius=float(reaction_radius),
            closure_operator=C,
            sector_weights=sector_weights(bolt_angles, station_angles),
        )

    @classmethod
    def from_model(cls, model: JointModel, se: Superelement, n_radial: int = 5) -> "JointLayout":
        g = model.geometry
        return cls.build(
            model.gasket,
            se.master_dofmap,
            g.station_angles,
            g.bolt_angles,
            g.bolt_circle_radius,
            g.gasket_inner_radius,
            g.gasket_outer_radius,
            g.gasket_reaction_radius,
            n_radial,
        )

    def closures(self, u) -> np.ndarray:
        """Gasket closure per (station, radial node)."""
        return (self.closure_operator @ u).reshape(self.n_stations, -1)

    def station_areas(self) -> np.ndarray:
        return np.tile(self.area_weights, self.n_stations)

    def external_load_vector(self, n_masters: int, axial_load=0.0, bending_moment=0.0, plane_angle=0.0):
        f = np.zeros(n_masters)
        r0, rx, ry = self.remote_dofs
        if axial_load:
            if r0 < 0:
                raise SolverError("layout has no remote axial DOF to carry the axial load")
            f[r0] += axial_load
        if bending_moment:
            if rx < 0 or ry < 0:
                raise SolverError("layout has no remote rotation DOFs to carry the bending moment")
            f[rx] += bending_moment * math.sin(plane_angle)
            f[ry] -= bending_moment * math.cos(plane_angle)
        return f


def gasket_force(layout: JointLayout, u) -> np.ndarray:
    """Generalised gasket reaction on the masters (gradient of the gasket energy)."""
    c = layout.closure_operator @ u
    return layout.closure_operator.T @ (layout.station_areas() * layout.gasket.stress(c))


def gasket_tangent_matrix(layout: JointLayout, u) -> np.ndarray:
    C = layout.closure_operator
    c = C @ u
    k = layout.station_areas() * layout.gasket.tangent(c)
    return C.T @ (k[:, None] * C)


def internal_force(se: Superelement, layout: JointLayout, u) -> np.ndarray:
    return se.K_reduced @ u + gasket_force(layout, u)


def tangent_stiffness(se: Superelement, layout: JointLayout, u) -> np.ndarray:
    return se.K_reduced + gasket_tangent_matrix(layout, u)


def stress_field(layout: JointLayout, u) -> GasketStressField:
    c = layout.closures(u)
    c_ext = c[:, -1]
    s_ext = layout.gasket.stress(c_ext)
    fields = dict(
        sector_angles=layout.station_angles.copy(),
        stress_per_sector=s_ext,
        stress_at_external_radius=layout.sector_weights @ s_ext,
        contact_flags=c_ext > 0.0,
        closures=c,
        extrapolated=bool(np.any(layout.gasket.is_extrapolated(c))),
    )
    for v in fields.values():
        if isinstance(v, np.ndarray):
            v.flags.writeable = False
    return GasketStressField(**fields)


@dataclass
class AnalysisState:
    """
    Converged state of one load step.

    ``applied`` is the external load vector on the masters and ``free`` the
    mask of DOFs solved for (bolt_top DOFs are prescribed in the external step).
    """

    u: np.ndarray
    lock_lengths: np.ndarray
    bolt_forces: np.ndarray
    preloads: np.ndarray
    field: GasketStressField
    step: str
    applied: np.ndarray
    free: np.ndarray
    residual_history: list = field(default_factory=list)

    @property
    def closures(self) -> np.ndarray:
        return self.field.closures


def bolt_forces(se: Superelement, layout: JointLayout, u) -> np.ndarray:
    # nothing but the pretension section acts on a bolt_top DOF
    return -(se.K_reduced[layout.bolt_dofs] @ u)


def _residual_scale(applied, free, preloads) -> float:
    return max(float(np.linalg.norm(applied[free])), float(np.sum(np.abs(preloads))))


def equilibrium_residual(state: AnalysisState, se: Superelement, layout: JointLayout, applied=None) -> float:
    """||internal - external|| over solved DOFs, divided by max(||external||, sum of preloads)."""
    applied = state.applied if applied is None else np.asarray(applied, dtype=float)
    r = internal_force(se, layout, state.u) - applied
    norm = float(np.linalg.norm(r[state.free]))
    scale = _residual_scale(applied, state.free, state.preloads)
    return norm / scale if scale > 0 else norm


def _newton(se, layout, u0, applied, free, preloads, tol, max_iter, on_singular):
    u = u0.copy()
    scale = _residual_scale(applied, free, preloads)
    scale = scale if scale > 0 else 1.0
    history = []
    alpha = 1.0
    rises = 0
    for _ in range(max_iter + 1):
        r = internal_force(se, layout, u) - applied
        res = float(np.linalg.norm(r[free])) / scale
        if history and res > history[-1]:
            rises += 1
            if rises >= 3:
                alpha *= 0.5
                rises = 0
        else:
            rises = 0
        history.append(res)
        if res <= tol:
            return u, history
        if len(history) > max_iter:
            break
        T = tangent_stiffness(se, layout, u)[np.ix_(free, free)]
        try:
            factor = scipy.linalg.cho_factor(T, lower=True, check_finite=False)
            d = np.abs(np.diag(factor[0])) ** 2
            if d.min() <= 1e-13 * d.max():
                raise np.linalg.LinAlgError("near-singular tangent")
        except np.linalg.LinAlgError:
            on_singular(u, history)
            raise
        du = scipy.linalg.cho_solve(factor, -r[free], check_finite=False)
        u[free] += alpha * du
    flags = stress_field(layout, u).contact_flags
    raise NonConvergenceError(
        f"Newton did not converge in {max_iter} iterations (last residual {history[-1]:.3e})",
        residual_history=history,
        contact_flags=flags,
    )


def apply_pretension(
    se: Superelement,
    layout: JointLayout,
    preloads,
    tol: float = DEFAULT_TOL,
    max_newton: int = DEFAULT_MAX_NEWTON,
) -> AnalysisState:
    """Load step 1: install the commanded bolt preloads [N] with the gasket engaged."""
    P = np.asarray(preloads, dtype=float)
    if P.shape != (layout.n_bolts,):
        raise ValueError(f"expected {layout.n_bolts} preloads, got shape {P.shape}")
    if np.any(P < 0):
        raise ValueError("preloads must be non-negative")
    n = se.n_masters
    applied = np.zeros(n)
    applied[layout.bolt_dofs] = -P
    free = np.ones(n, dtype=bool)

    def singular(u, history):
        if np.any(P > 0):
            raise ModelInconsistencyError(
                "tangent singular during pretension: the gasket has lifted off entirely"
            )
        raise SolverError("tangent singular during pretension")

    u, history = _newton(se, layout, np.zeros(n), applied, free, P, tol, max_newton, singular)
    fld = stress_field(layout, u)
    if np.any(P > 0) and not np.any(fld.closures > 0):
        raise ModelInconsistencyError("total gasket lift-off under positive preload")
    return AnalysisState(
        u=u,
        lock_lengths=-u[layout.bolt_dofs].copy(),
        bolt_forces=bolt_forces(se, layout, u),
        preloads=P.copy(),
        field=fld,
        step="pretension",
        applied=applied,
        free=free,
        residual_history=history,
    )


def apply_external(
    state: AnalysisState,
    se: Superelement,
    layout: JointLayout,
    axial_load: float = 0.0,
    bending_moment: float = 0.0,
    plane_angle: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_newton: int = DEFAULT_MAX_NEWTON,
) -> AnalysisState:
    """Load step 2: freeze lock lengths, apply axial force and moment at the remote node."""
    n = se.n_masters
    applied = layout.external_load_vector(n, axial_load, bending_moment, plane_angle)
    free = np.ones(n, dtype=bool)
    free[layout.bolt_dofs] = False
    u0 = state.u.copy()
    u0[layout.bolt_dofs] = -state.lock_lengths

    def singular(u, history):
        raise NonConvergenceError(
            "tangent singular during external load step",
            residual_history=history,
            contact_flags=stress_field(layout, u).contact_flags,
        )

    u, history = _newton(se, layout, u0, applied, free, state.preloads, tol, max_newton, singular)
    return AnalysisState(
        u=u,
        lock_lengths=state.lock_lengths.copy(),
        bolt_forces=bolt_forces(se, layout, u),
        preloads=state.preloads.copy(),
        field=stress_field(layout, u),
        step="external",
        applied=applied,
        free=free,
        residual_history=history,
    )


def analyse(se, layout, preloads, axial_load=0.0, bending_moment=0.0, plane_angle=0.0, **kw) -> AnalysisState:
    """Both load steps back to back."""
    state = apply_pretension(se, layout, preloads, **kw)
    return apply_external(state, se, layout, axial_load, bending_moment, plane_angle, **kw)
