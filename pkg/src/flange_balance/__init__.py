"""Reduced-order bolted flange solver and non-uniform preload optimizer."""

from importlib import resources

from .jointmodel import (
    BoltSpec,
    FlangeMaterial,
    FlangeRingSection,
    GasketCurve,
    GasketStressField,
    JointGeometry,
    JointModel,
    LoadCase,
    OptimizationResult,
    PipeSpec,
    RigidityFactor,
    gasket_stress,
    gasket_tangent,
    load_document,
    validate,
)
from .optimizer import OptimizerConfig, compute_target, closed_form_compensation, optimize, optimize_loadcase, secant_update
from .solver import JointLayout, analyse, apply_external, apply_pretension, equilibrium_residual
from .structure import DofMap, StiffnessSystem, assemble_ring_model, default_masters, import_condensed
from .superelement import Superelement, condense, solve_reduced

__version__ = "0.1.0"


def sample_model_path():
    return resources.files(__package__) / "data" / "nps4_class150.json"


def load_sample():
    """The shipped NPS 4 class 150 example and its load case."""
    return load_document(sample_model_path())


def build_joint(model: JointModel, n_radial: int = 5):
    """Assemble, condense onto the default masters and lay out a joint model."""
    system = assemble_ring_model(model)
    se = condense(system, default_masters(system.dofmap))
    return se, JointLayout.from_model(model, se, n_radial)
