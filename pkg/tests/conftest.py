import dataclasses

import numpy as np
import pytest

import flange_balance as fb
from flange_balance.jointmodel import GasketCurve
from flange_balance.solver import JointLayout
from flange_balance.structure import DofMap, StiffnessSystem, _add_spring
from flange_balance.superelement import condense


@pytest.fixture(scope="session")
def sample():
    """(model, load case) of the shipped NPS 4 class 150 example."""
    return fb.load_sample()


@pytest.fixture(scope="session")
def sample_joint(sample):
    model, _ = sample
    return fb.build_joint(model)


@pytest.fixture(scope="session")
def nominal_preloads(sample):
    model, loads = sample
    return loads.preload_forces(model.bolts)


def with_gasket(model, curve):
    return dataclasses.replace(model, gasket=curve)


def single_bolt_joint(gasket: GasketCurve, bolt_stiffness=5e8, pipe_stiffness=2e9, gasket_area=1e-3):
    """
    One bolt pulling one rigid flange station onto one gasket patch.

    DOFs: bolt_top, gasket_contact (the rigid flange) and the remote axial
    node, linked by the bolt spring and a pipe spring. Returns (se, layout).
    """
    dofmap = DofMap([
        ("bolt_top", 0, "axial_translation"),
        ("gasket_contact", 0, "axial_translation"),
        ("remote_load", 0, "axial_translation"),
    ])
    K = np.zeros((3, 3))
    _add_spring(K, [0, 1], [1.0, -1.0], bolt_stiffness)
    _add_spring(K, [1, 2], [1.0, -1.0], pipe_stiffness)
    se = condense(StiffnessSystem(K, dofmap), [0, 1, 2])
    # a one-node radial rule: the whole patch is one tributary area
    r_o = np.sqrt(gasket_area / np.pi + 0.01**2)
    layout = JointLayout.build(gasket, se.master_dofmap, [0.0], [0.0], 0.2, 0.01, r_o, r_o, n_radial=1)
    return se, layout


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
