"""
Iterative search for the non-uniform preloads that even out the gasket stress.

The loop follows a fixed order of analyses:

1. ideal assembly (uniform preload, no external load) -> target stress at the
   external gasket radius;
2. bootstrap A: uniform preload times the overload factor, external loads on;
3. bootstrap B: uniform preload plus the closed-form compensation, loads on;
4. per-bolt secant updates from the two most recent (preload, stress) pairs,
   each followed by a full two-step analysis, until every sector stress is
   within ``tolerance`` of the target.

Each sector is treated as if only its own bolt influenced it; elastic
interaction between bolts is absorbed by iterating.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .jointmodel import IterationRecord, JointModel, LoadCase, OptimizationResult, RigidityFactor
from .solver import JointLayout, SolverError, analyse, apply_pretension
from .superelement import Superelement

log = logging.getLogger(__name__)

DEGENERATE_RATIO = 1e-6
FALLBACK_NUDGE = 0.05


class TargetRule(enum.Enum):
    EXTERNAL_RADIUS_MATCH = "external_radius_match"


@dataclass(frozen=True)
class OptimizerConfig:
    tolerance: float = 0.03
    max_iterations: int = 50
    initial_overload_factor: float = 1.5
    rigidity_factor: RigidityFactor = field(default_factory=RigidityFactor)
    target_rule: TargetRule = TargetRule.EXTERNAL_RADIUS_MATCH

    def __post_init__(self):
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if not self.initial_overload_factor > 1:
            raise ValueError(f"initial_overload_factor must exceed 1, got {self.initial_overload_factor}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not isinstance(self.rigidity_factor, RigidityFactor):
            object.__setattr__(self, "rigidity_factor", RigidityFactor(float(self.rigidity_factor)))
        if not isinstance(self.target_rule, TargetRule):
            object.__setattr__(self, "target_rule", TargetRule(self.target_rule))


class OptimizationError(SolverError):
    """A solve failed mid-loop; ``history`` holds the analyses completed so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def compute_target(se: Superelement, layout: JointLayout, uniform_preload: float, cv_tol: float = 1e-6) -> float:
    """
    External-radius gasket stress of the ideal assembly (no external loads).

    Rotational symmetry makes every bolt sector identical, so the per-sector
    values must agree to ``cv_tol``; stations between bolts may still scallop.
    """
    if not uniform_preload > 0:
        raise ValueError("uniform preload must be positive")
    state = apply_pretension(se, layout, np.full(layout.n_bolts, float(uniform_preload)))
    s = state.field.stress_at_external_radius
    mean = float(np.mean(s))
    cv = float(np.std(s) / mean) if mean > 0 else np.inf
    if cv > cv_tol:
        raise SolverError(f"ideal-case external-radius stress is not uniform (CV {cv:.3e} > {cv_tol:.1e})")
    return mean


def compensation(layout: JointLayout, axial_load, bending_moment, rigidity_factor=1.0, plane_angle=0.0) -> np.ndarray:
    """Closed-form preload change per bolt [N] offsetting the axial load and moment."""
    n = layout.n_bolts
    Fm = float(rigidity_factor)
    R = layout.bolt_circle_radius
    return axial_load / n + 2.0 * Fm * bending_moment * np.cos(layout.bolt_angles - plane_angle) / (n * R)


def closed_form_compensation(model: JointModel, axial_load, bending_moment, rigidity_factor=1.0, plane_angle=0.0) -> np.ndarray:
    """Same as :func:`compensation`, reading bolt positions from the joint model."""
    g = model.geometry
    n = g.n_bolts
    Fm = float(rigidity_factor)
    theta = np.asarray(g.bolt_angles, dtype=float)
    return axial_load / n + 2.0 * Fm * bending_moment * np.cos(theta - plane_angle) / (n * g.bolt_circle_radius)


def secant_update(P_prev2, P_prev1, GS_prev2, GS_prev1, GS_target, events=None, nominal=None):
    """
    One per-bolt secant step toward ``GS_target``.

    Sectors whose last two stresses coincide (typically both zero after a
    contact loss) get a 5 % nudge toward the target instead; negative
    preloads are clamped to zero. Both cases are appended to ``events``.
    """
    P2 = np.asarray(P_prev2, dtype=float)
    P1 = np.asarray(P_prev1, dtype=float)
    G2 = np.asarray(GS_prev2, dtype=float)
    G1 = np.asarray(GS_prev1, dtype=float)
    events = events if events is not None else []
    dG = G1 - G2
    degenerate = np.abs(dG) < DEGENERATE_RATIO * abs(GS_target)
    with np.errstate(divide="ignore", invalid="ignore"):
        P_next = P1 - (P1 - P2) / dG * (G1 - GS_target)
    for i in np.flatnonzero(degenerate):
        base = P1[i]
        if base <= 0 and nominal is not None:
            base = float(np.asarray(nominal, dtype=float).flat[i])
        P_next[i] = base * (1.0 + FALLBACK_NUDGE * np.sign(GS_target - G1[i]))
        events.append(("degenerate_secant", int(i)))
    for i in np.flatnonzero(P_next < 0):
        P_next[i] = 0.0
        events.append(("clamped_negative", int(i)))
    return P_next


def relative_errors(gs, target: float) -> np.ndarray:
    return np.abs(np.asarray(gs, dtype=float) - target) / target


def optimize(
    se: Superelement,
    layout: JointLayout,
    preloads,
    axial_load: float = 0.0,
    bending_moment: float = 0.0,
    plane_angle: float = 0.0,
    config: OptimizerConfig | None = None,
) -> OptimizationResult:
    """
    Run the full search. ``preloads`` are the uniform nominal bolt-up forces [N].

    Running out of iterations returns ``converged=False`` with the history;
    a solver failure raises :class:`OptimizationError` carrying the history.
    """
    config = config or OptimizerConfig()
    P0 = np.asarray(preloads, dtype=float)
    if P0.shape != (layout.n_bolts,):
        raise ValueError(f"expected {layout.n_bolts} preloads")
    if not np.allclose(P0, P0[0], rtol=1e-12, atol=0):
        raise ValueError("nominal preloads must be uniform")
    loads = dict(axial_load=axial_load, bending_moment=bending_moment, plane_angle=plane_angle)
    tol = config.tolerance
    history: list[IterationRecord] = []

    try:
        ideal = apply_pretension(se, layout, P0)
        target = compute_target(se, layout, float(P0[0]))
    except SolverError as exc:
        raise OptimizationError(f"ideal analysis failed: {exc}", history) from exc
    history.append(IterationRecord(
        "ideal", P0.copy(), ideal.field,
        float(relative_errors(ideal.field.stress_at_external_radius, target).max()),
        ideal.bolt_forces,
    ))

    def run(stage, P, events=()):
        try:
            state = analyse(se, layout, P, **loads)
        except SolverError as exc:
            raise OptimizationError(f"{stage} analysis failed: {exc}", history) from exc
        gs = state.field.stress_at_external_radius
        err = float(relative_errors(gs, target).max())
        history.append(IterationRecord(stage, np.array(P, dtype=float), state.field, err, state.bolt_forces, list(events)))
        log.debug("%s: max relative error %.4f", stage, err)
        return gs, err

    P_a = P0 * config.initial_overload_factor
    gs_a, err = run("bootstrap_overload", P_a)
    groups = [(P_a, gs_a)]
    if err > tol:
        P_b = P0 + compensation(layout, axial_load, bending_moment, config.rigidity_factor, plane_angle)
        P_b = np.maximum(P_b, 0.0)
        gs_b, err = run("bootstrap_compensation", P_b)
        groups.append((P_b, gs_b))

    secant_steps = 0
    while err > tol and secant_steps < config.max_iterations:
        (P2, G2), (P1, G1) = groups[-2], groups[-1]
        events = []
        P_next = secant_update(P2, P1, G2, G1, target, events, nominal=P0)
        gs, err = run("secant", P_next, events)
        groups = [groups[-1], (P_next, gs)]
        secant_steps += 1

    final = history[-1]
    # certificate recomputed from the stored field, not from loop state
    converged = bool(relative_errors(final.field.stress_at_external_radius, target).max() <= tol)
    return OptimizationResult(
        target_stress=target,
        nominal_preloads=P0.copy(),
        final_preloads=final.preloads.copy(),
        iterations=len(history) - 1,
        history=history,
        converged=converged,
        tolerance=tol,
    )


def optimize_loadcase(se, layout, model: JointModel, loads: LoadCase, config=None) -> OptimizationResult:
    return optimize(
        se, layout, loads.preload_forces(model.bolts),
        loads.axial_load, loads.bending_moment, loads.moment_plane_angle, config,
    )
