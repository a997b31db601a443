"""
Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the verdicts
inline; they are also printed in the terminal summary of any run.
"""

import math
import time

import numpy as np
import pytest

import flange_balance as fb
from flange_balance.cli import run
from flange_balance.jointmodel import GasketCurve
from flange_balance.optimizer import OptimizerConfig, closed_form_compensation, optimize, optimize_loadcase
from flange_balance.solver import (
    analyse,
    apply_external,
    apply_pretension,
    equilibrium_residual,
    gasket_force,
    gasket_tangent_matrix,
    internal_force,
    tangent_stiffness,
)
from flange_balance.superelement import condense, solve_reduced
from conftest import single_bolt_joint
from systems import full_solve, random_masters, random_spring_system

VERDICTS = []


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def test_1_condensation_exactness():
    rng = np.random.default_rng(1)
    worst, sizes = 0.0, []
    start = time.perf_counter()
    for _ in range(120):
        n = int(rng.integers(10, 501))
        system = random_spring_system(rng, n)
        se = condense(system, random_masters(rng, system))
        f = rng.normal(size=n)
        f[list(system.constrained_dofs)] = 0.0
        u = se.expand(*solve_reduced(se, f[se.masters], f[se.slaves]))
        ref = full_solve(system, f)
        worst = max(worst, np.linalg.norm(u - ref) / np.linalg.norm(ref))
        sizes.append(n)
    elapsed = time.perf_counter() - start
    verdict(
        1, worst <= 1e-10 and elapsed < 30.0 and min(sizes) >= 10 and max(sizes) <= 500,
        f"120 systems of {min(sizes)}-{max(sizes)} DOFs, worst relative error {worst:.2e}, {elapsed:.1f} s",
    )


def test_2_compensation_formula(sample):
    model = sample[0]
    dP = closed_form_compensation(model, 200e3, 9600.0)
    # 200 kN / 8 + 2 * 9600 * cos(22.5 deg) / (8 * 0.09525), to 40 digits
    hand = 48278.85436248911511504083626826553163647
    err = abs(dP[0] - hand) / hand
    uniform = closed_form_compensation(model, 200e3, 0.0)
    geometry = fb.JointGeometry(
        n_bolts=4, bolt_circle_radius=0.1, gasket_inner_radius=0.05, gasket_outer_radius=0.07,
        gasket_reaction_radius=0.06, flange_ring_section=fb.FlangeRingSection(0.04, 0.02),
        pipe_attachment_radius=0.05, n_sectors=8, bolt_angles=(0.0, math.pi / 2, math.pi, 3 * math.pi / 2),
    )
    quarter = fb.JointModel(geometry, model.bolts, model.gasket, model.pipe)
    at_90 = closed_form_compensation(quarter, 0.0, 9600.0)[1]
    ok = err <= 1e-12 and np.all(uniform == 25000.0) and abs(at_90) <= 1e-12 * 9600.0
    verdict(2, ok, f"dP(22.5 deg) = {dP[0]:.6f} N (relative error {err:.1e}); M = 0 -> 25000 N; dP(90 deg) = {at_90:.1e} N")


def test_3_secant_exact_on_affine_response():
    se, layout = single_bolt_joint(GasketCurve.linear(1e-3, 100e6))
    r = optimize(se, layout, [20e3], axial_load=5e3)
    stages = [h.stage for h in r.history]
    err = r.history[-1].max_relative_error
    ok = stages == ["ideal", "bootstrap_overload", "bootstrap_compensation", "secant"] and err <= 1e-10
    verdict(3, ok, f"single-bolt linear gasket: relative error {err:.1e} after one secant step")


def test_4_ideal_uniformity(sample_joint, nominal_preloads):
    se, layout = sample_joint
    fld = apply_pretension(se, layout, nominal_preloads).field
    gs = fld.stress_at_external_radius
    cv = gs.std() / gs.mean()
    stations = fld.stress_per_sector
    verdict(
        4, cv <= 1e-6,
        f"sector CV {cv:.1e} at {gs.mean() / 1e6:.2f} MPa (station values scallop by CV {stations.std() / stations.mean():.1e})",
    )


def test_5_example_load_case(sample):
    model, loads = sample
    start = time.perf_counter()
    se, layout = fb.build_joint(model)
    r = optimize_loadcase(se, layout, model, loads)
    elapsed = time.perf_counter() - start
    P = r.final_preloads
    var = r.percent_variation
    mirror = np.max(np.abs(P - P[::-1]) / P)
    ordered = P[0] > P[1] > P[2] > P[3]
    mpa = ", ".join(f"{p / model.bolts.nominal_area / 1e6:.1f}" for p in P)
    ok = (
        r.converged and r.iterations <= 50 and elapsed <= 10.0 and mirror <= 0.005
        and ordered and var.max() > 100.0 and var.min() < 0.0
    )
    verdict(
        5, ok,
        f"converged={r.converged} after {r.iterations} analyses in {elapsed:.2f} s, target {r.target_stress / 1e6:.2f} MPa; "
        f"preloads [{mpa}] MPa; variation {var.max():+.1f}% .. {var.min():+.1f}%; mirror {mirror:.1e}",
    )


def test_6_equilibrium(sample, sample_joint, nominal_preloads):
    model, loads = sample
    se, layout = sample_joint
    worst = 0.0
    r = optimize_loadcase(se, layout, model, loads)
    for rec in r.history:
        if rec.stage == "ideal":
            state = apply_pretension(se, layout, rec.preloads)
        else:
            state = analyse(se, layout, rec.preloads, loads.axial_load, loads.bending_moment, loads.moment_plane_angle)
        worst = max(worst, equilibrium_residual(state, se, layout))

    M = loads.bending_moment
    s1 = apply_pretension(se, layout, nominal_preloads)
    s2 = apply_external(s1, se, layout, 0.0, M, 0.0)
    A = np.tile(layout.area_weights, layout.n_stations)
    rad = np.tile(layout.radial_nodes, layout.n_stations)
    theta = np.repeat(layout.station_angles, len(layout.radial_nodes))
    sig1 = layout.gasket.stress(s1.field.closures).ravel()
    sig2 = layout.gasket.stress(s2.field.closures).ravel()
    dF = s2.bolt_forces - s1.bolt_forces
    axial = abs(dF.sum() - np.sum((sig2 - sig1) * A)) / nominal_preloads.sum()
    moment = np.sum(dF * layout.bolt_circle_radius * np.cos(layout.bolt_angles)) - np.sum(sig2 * A * rad * np.cos(theta))
    moment_err = abs(moment - M) / M
    ok = worst <= 1e-8 and axial <= 1e-6 and moment_err <= 1e-6
    verdict(6, ok, f"worst residual {worst:.1e} over {len(r.history)} analyses; pure moment: axial {axial:.1e}, moment {moment_err:.1e}")


def test_7_tangent_consistency(sample, sample_joint, nominal_preloads):
    _, loads = sample
    se, layout = sample_joint
    rng = np.random.default_rng(7)
    base = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment).u
    scale = np.abs(base).max()
    h = 1e-8 * scale
    knots = np.asarray(layout.gasket.closures)
    worst_full = worst_gasket = 0.0
    states = 0
    while states < 20:
        u = base + rng.normal(scale=0.05 * scale, size=base.size)
        c = layout.closures(u).ravel()
        if np.min(np.abs(c[:, None] - knots[None, :])) < 10 * h:
            continue
        T = tangent_stiffness(se, layout, u)
        Tg = gasket_tangent_matrix(layout, u)
        fd = np.empty_like(T)
        fdg = np.empty_like(T)
        for j in range(u.size):
            e = np.zeros_like(u)
            e[j] = h
            fd[:, j] = (internal_force(se, layout, u + e) - internal_force(se, layout, u - e)) / (2 * h)
            fdg[:, j] = (gasket_force(layout, u + e) - gasket_force(layout, u - e)) / (2 * h)
        worst_full = max(worst_full, np.linalg.norm(fd - T) / np.linalg.norm(T))
        worst_gasket = max(worst_gasket, np.linalg.norm(fdg - Tg) / np.linalg.norm(Tg))
        states += 1
    verdict(7, worst_full <= 1e-5 and worst_gasket <= 1e-5,
            f"20 states: full tangent {worst_full:.1e}, gasket part alone {worst_gasket:.1e}")


def test_8_contact_loss(sample, sample_joint, nominal_preloads):
    model, loads = sample
    se, layout = sample_joint
    loaded = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment)
    lost = loaded.field.lost_contact_count
    r = optimize_loadcase(se, layout, model, loads)

    cfg = OptimizerConfig(rigidity_factor=0.05, initial_overload_factor=1.1)
    fallback = optimize(se, layout, nominal_preloads, 0.0, 30000.0, 0.0, cfg)
    events = [e for h in fallback.history for e in h.events if e[0] == "degenerate_secant"]
    ok = lost >= 1 and r.converged and len(events) > 0 and fallback.converged
    verdict(
        8, ok,
        f"{lost} of {layout.n_stations} stations open at uniform preload; example case converged={r.converged}; "
        f"fallback case: {len(events)} degenerate-secant nudges, converged={fallback.converged} after {fallback.iterations}",
    )


def test_9_determinism(tmp_path):
    argv = ["optimize", "--model", str(fb.sample_model_path()), "--out", str(tmp_path)]
    codes = [run(argv)]
    first = {p.name: p.read_bytes() for p in sorted(tmp_path.iterdir()) if p.is_file()}
    codes.append(run(argv))
    second = {p.name: p.read_bytes() for p in sorted(tmp_path.iterdir()) if p.is_file()}
    same = first == second
    verdict(9, codes == [0, 0] and same and len(first) >= 7, f"{len(first)} output files byte-identical across two runs: {same}")


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None and VERDICTS:
        reporter.write_sep("-", "acceptance verdicts")
        for line in VERDICTS:
            reporter.write_line(line)
