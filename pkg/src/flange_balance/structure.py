"""
Linear stiffness model of the flange ring, bolts and remote load node.

The flange is idealised as a circular ring of ``n_sectors`` stations. Each
station carries the axial translation ``w`` of the ring centroid and the
meridional rotation ``phi`` of the cross-section, so the axial displacement
of any point of the section at radius ``r`` is ``w - (r - a) * phi`` with
``a`` the centroid radius.

Ring strains are taken on a finite-difference stencil that reproduces the
three rigid motions of the ring exactly (axial translation and two tilts):

    curvature  kappa_k = (w[k+1] - 2 w[k] + w[k-1]) / chord**2 - phi[k] / a
    twist      tau_k   = (phi[k+1] - phi[k]) / h + (w[k+1] - w[k]) / (a h)

with ``h = a * dtheta`` the arc length and ``chord = 2 a sin(dtheta / 2)``.

Linear springs attach to the ring:

* gasket_contact: flange face under the gasket, joined to the ring point at
  the gasket reaction radius through the flange through-thickness stiffness;
* bolt_top: lower end of the elastic bolt (pretension-section side), joined
  to the ring point at the bolt circle by the bolt axial stiffness;
* remote_load: loaded node rigidly tied to the pipe end; the pipe wall links
  the pipe end to the ring at the attachment radius (membrane axial stiffness
  plus shell edge rotational stiffness).

The gasket itself is nonlinear and lives in :mod:`flange_balance.solver`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
import scipy.io
import scipy.sparse

from .jointmodel import JointModel, validate

NODE_KINDS = ("bolt_top", "gasket_contact", "remote_load", "ring_station")
DOF_KINDS = ("axial_translation", "rotation_x", "rotation_y", "meridional_rotation")


class StructureError(ValueError):
    pass


class AssemblyError(StructureError):
    pass


class Dof(NamedTuple):
    node_kind: str
    station_index: int
    dof_kind: str


class DofMap:
    """Ordered, duplicate-free list of DOF descriptors."""

    def __init__(self, entries: Iterable):
        self.entries = tuple(Dof(*e) if not isinstance(e, Dof) else e for e in entries)
        self._index = {}
        for i, e in enumerate(self.entries):
            if e.node_kind not in NODE_KINDS:
                raise StructureError(f"unknown node_kind {e.node_kind!r}")
            if e.dof_kind not in DOF_KINDS:
                raise StructureError(f"unknown dof_kind {e.dof_kind!r}")
            if e in self._index:
                raise StructureError(f"duplicate DOF entry {e}")
            self._index[e] = i

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __eq__(self, other):
        return isinstance(other, DofMap) and self.entries == other.entries

    def __contains__(self, entry):
        return Dof(*entry) in self._index

    def index(self, node_kind: str, station_index: int, dof_kind: str = "axial_translation") -> int:
        return self._index[Dof(node_kind, station_index, dof_kind)]

    def find(self, node_kind: str, station_index: int, dof_kind: str = "axial_translation"):
        return self._index.get(Dof(node_kind, station_index, dof_kind))

    def select(self, node_kind=None, dof_kind=None) -> list[int]:
        return [
            i for i, e in enumerate(self.entries)
            if (node_kind is None or e.node_kind == node_kind) and (dof_kind is None or e.dof_kind == dof_kind)
        ]

    def subset(self, indices) -> "DofMap":
        return DofMap([self.entries[i] for i in indices])

    def to_json(self) -> list[dict]:
        return [e._asdict() for e in self.entries]

    @classmethod
    def from_json(cls, data) -> "DofMap":
        return cls([Dof(d["node_kind"], int(d["station_index"]), d["dof_kind"]) for d in data])

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "DofMap":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class StiffnessSystem:
    K: np.ndarray
    dofmap: DofMap
    constrained_dofs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        K.flags.writeable = False
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "constrained_dofs", frozenset(int(i) for i in self.constrained_dofs))
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise StructureError(f"stiffness matrix must be square, got shape {K.shape}")
        if K.shape[0] != len(self.dofmap):
            raise StructureError(f"matrix dimension {K.shape[0]} does not match DOF map length {len(self.dofmap)}")

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def free_dofs(self) -> np.ndarray:
        return np.array([i for i in range(self.n) if i not in self.constrained_dofs], dtype=int)

    def asymmetry(self) -> float:
        norm = np.linalg.norm(self.K)
        return float(np.linalg.norm(self.K - self.K.T) / norm) if norm > 0 else 0.0

    def min_eigenvalue_ratio(self) -> float:
        """Smallest eigenvalue of the symmetric part divided by the spectral norm."""
        eig = np.linalg.eigvalsh(0.5 * (self.K + self.K.T))
        scale = np.max(np.abs(eig))
        return float(eig[0] / scale) if scale > 0 else 0.0

    def check(self, sym_tol: float = 1e-12, psd_tol: float = 1e-9) -> None:
        asym = self.asymmetry()
        if asym > sym_tol:
            raise StructureError(f"stiffness matrix asymmetric: relative Frobenius error {asym:.3e} > {sym_tol:.1e}")
        ratio = self.min_eigenvalue_ratio()
        if ratio < -psd_tol:
            raise StructureError(f"stiffness matrix not positive semidefinite: min eigenvalue ratio {ratio:.3e}")

    def constrained(self, dofs) -> "StiffnessSystem":
        return StiffnessSystem(self.K, self.dofmap, self.constrained_dofs | frozenset(dofs))


def build_dofmap(n_sectors: int, n_bolts: int) -> DofMap:
    entries = []
    for k in range(n_sectors):
        entries.append(Dof("ring_station", k, "axial_translation"))
        entries.append(Dof("ring_station", k, "meridional_rotation"))
    entries += [Dof("gasket_contact", k, "axial_translation") for k in range(n_sectors)]
    entries += [Dof("bolt_top", i, "axial_translation") for i in range(n_bolts)]
    entries += [
        Dof("remote_load", 0, "axial_translation"),
        Dof("remote_load", 0, "rotation_x"),
        Dof("remote_load", 0, "rotation_y"),
    ]
    return DofMap(entries)


def bolt_stations(model: JointModel) -> np.ndarray:
    g = model.geometry
    step = 2 * math.pi / g.n_sectors
    offsets = (np.asarray(g.bolt_angles) - g.bolt_angles[0]) / step
    return np.round(offsets).astype(int) % g.n_sectors


def torsion_constant(width: float, thickness: float) -> float:
    """Saint-Venant torsion constant of a solid rectangle (Roark approximation)."""
    a, b = max(width, thickness), min(width, thickness)
    return a * b**3 * (1.0 / 3.0 - 0.21 * (b / a) * (1.0 - b**4 / (12.0 * a**4)))


def _add_spring(K, idx, coeffs, k):
    """Add k * c c^T on the listed DOFs (the energy of one linear strain measure)."""
    idx = np.asarray(idx)
    c = np.asarray(coeffs, dtype=float)
    np.add.at(K, (idx[:, None], idx[None, :]), k * np.outer(c, c))


def ring_element_matrices(model: JointModel, dofmap: DofMap | None = None):
    """Bending and torsion stiffness of the ring alone, on the full DOF map."""
    g = model.geometry
    n_s = g.n_sectors
    dofmap = dofmap or build_dofmap(n_s, g.n_bolts)
    n = len(dofmap)
    sec = g.flange_ring_section
    E = model.flange.youngs_modulus
    G = model.flange.shear_modulus
    a = g.ring_centroid_radius
    dth = 2 * math.pi / n_s
    h = a * dth
    chord = 2 * a * math.sin(dth / 2)

    EI = E * sec.radial_width * sec.axial_thickness**3 / 12.0
    GJ = G * torsion_constant(sec.radial_width, sec.axial_thickness)

    w = [dofmap.index("ring_station", k, "axial_translation") for k in range(n_s)]
    phi = [dofmap.index("ring_station", k, "meridional_rotation") for k in range(n_s)]

    K_bend = np.zeros((n, n))
    K_tors = np.zeros((n, n))
    for k in range(n_s):
        km, kp = (k - 1) % n_s, (k + 1) % n_s
        _add_spring(
            K_bend,
            [w[km], w[k], w[kp], phi[k]],
            [1 / chord**2, -2 / chord**2, 1 / chord**2, -1 / a],
            EI * h,
        )
        _add_spring(
            K_tors,
            [phi[k], phi[kp], w[k], w[kp]],
            [-1 / h, 1 / h, -1 / (a * h), 1 / (a * h)],
            GJ * h,
        )
    return K_bend, K_tors


def assemble_ring_model(model: JointModel) -> StiffnessSystem:
    """
    Assemble the linear flange/bolt/pipe stiffness over the explicit DOF map.

    No DOFs are constrained: the structure floats with exactly three rigid
    modes until the gasket (nonlinear, outside this model) and the bolt
    pretension sections support it.
    """
    problems = validate(model)
    if problems:
        raise AssemblyError("invalid joint model: " + "; ".join(problems))

    g = model.geometry
    n_s, n_b = g.n_sectors, g.n_bolts
    dofmap = build_dofmap(n_s, n_b)
    K_bend, K_tors = ring_element_matrices(model, dofmap)
    K = K_bend + K_tors

    E = model.flange.youngs_modulus
    nu = model.flange.poisson_ratio
    a = g.ring_centroid_radius
    dth = 2 * math.pi / n_s
    theta = g.station_angles
    t = g.flange_ring_section.axial_thickness

    w = [dofmap.index("ring_station", k, "axial_translation") for k in range(n_s)]
    phi = [dofmap.index("ring_station", k, "meridional_rotation") for k in range(n_s)]

    # flange face under the gasket
    k_face = E * (g.gasket_area / n_s) / (0.5 * t)
    lever_g = g.gasket_reaction_radius - a
    for k in range(n_s):
        gk = dofmap.index("gasket_contact", k)
        _add_spring(K, [gk, w[k], phi[k]], [1.0, -1.0, lever_g], k_face)

    # bolts
    lever_b = g.bolt_circle_radius - a
    for i, k in enumerate(bolt_stations(model)):
        top = dofmap.index("bolt_top", i)
        _add_spring(K, [top, w[k], phi[k]], [1.0, -1.0, lever_b], model.bolts.stiffness)

    # pipe wall between the ring and the rigidly tied pipe end
    rp = g.pipe_attachment_radius
    tw, L = model.pipe.wall_thickness, model.pipe.length
    k_axial = E * tw * rp * dth / L
    D = E * tw**3 / (12 * (1 - nu**2))
    beta = (3 * (1 - nu**2)) ** 0.25 / math.sqrt(rp * tw)
    k_rot = beta * D * rp * dth
    r0 = dofmap.index("remote_load", 0, "axial_translation")
    rx = dofmap.index("remote_load", 0, "rotation_x")
    ry = dofmap.index("remote_load", 0, "rotation_y")
    lever_p = rp - a
    for k in range(n_s):
        s, c = math.sin(theta[k]), math.cos(theta[k])
        # ring point at rp minus pipe end: (w - lever_p*phi) - (w0 + rx*rp*sin - ry*rp*cos)
        _add_spring(K, [w[k], phi[k], r0, rx, ry], [1.0, -lever_p, -1.0, -rp * s, rp * c], k_axial)
        # relative meridional rotation: phi - (-rx*sin + ry*cos)
        _add_spring(K, [phi[k], rx, ry], [1.0, s, -c], k_rot)

    K = 0.5 * (K + K.T)
    system = StiffnessSystem(K, dofmap)
    system.check()
    return system


def default_masters(dofmap: DofMap) -> list[int]:
    """Bolt, gasket and load DOFs plus the ring rotations the gasket acts on."""
    return [
        i for i, e in enumerate(dofmap.entries)
        if not (e.node_kind == "ring_station" and e.dof_kind == "axial_translation")
    ]


def import_condensed(matrix_file, dof_map_file, sym_tol: float = 1e-9, psd_tol: float = 1e-9) -> StiffnessSystem:
    """Load an externally condensed stiffness (MatrixMarket) and its JSON DOF map."""
    dofmap = DofMap.read(dof_map_file)
    M = scipy.io.mmread(str(matrix_file))
    K = M.toarray() if scipy.sparse.issparse(M) else np.asarray(M, dtype=float)
    if K.shape[0] != K.shape[1]:
        raise StructureError(f"matrix is not square: {K.shape}")
    if K.shape[0] != len(dofmap):
        raise StructureError(f"dimension mismatch: matrix {K.shape[0]} vs DOF map {len(dofmap)}")
    system = StiffnessSystem(K, dofmap)
    system.check(sym_tol=sym_tol, psd_tol=psd_tol)
    return system


def write_matrix_market(K, path, comment: str = "") -> None:
    """Write a symmetric matrix as MatrixMarket coordinate/real/symmetric."""
    K = np.asarray(K, dtype=float)
    lower = scipy.sparse.coo_matrix(np.tril(K))
    order = np.lexsort((lower.row, lower.col))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        if comment:
            fh.write(f"% {comment}\n")
        fh.write(f"{K.shape[0]} {K.shape[1]} {lower.nnz}\n")
        for r, c, v in zip(lower.row[order], lower.col[order], lower.data[order]):
            fh.write(f"{int(r) + 1} {int(c) + 1} {float(v)!r}\n")
