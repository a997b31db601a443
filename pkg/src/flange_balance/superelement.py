"""Static (Guyan) condensation of a linear stiffness system onto master DOFs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .structure import DofMap, StiffnessSystem, write_matrix_market

# pivot ratio below which a Cholesky factor is treated as singular
SINGULAR_PIVOT_RATIO = 1e-13


class CondensationError(np.linalg.LinAlgError):
    def __init__(self, message, null_vector=None):
        super().__init__(message)
        self.null_vector = null_vector


class SingularReducedError(np.linalg.LinAlgError):
    pass


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def _factor(A):
    """Cholesky factor of an SPD matrix, or None if it is not (numerically) SPD."""
    if A.shape[0] == 0:
        return None
    try:
        c, lower = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    d = np.abs(np.diag(c)) ** 2
    if d.min() <= SINGULAR_PIVOT_RATIO * d.max():
        return None
    c.flags.writeable = False
    return c, lower


@dataclass(frozen=True)
class Superelement:
    """
    Condensed stiffness over master DOFs plus interior recovery data.

    Indices in ``masters`` and ``slaves`` refer to the originating
    StiffnessSystem. Constrained DOFs are in neither set (their displacement
    is zero). Instances are read-only after construction.
    """

    K_reduced: np.ndarray
    masters: np.ndarray
    slaves: np.ndarray
    master_dofmap: DofMap
    recovery_operator: np.ndarray
    interior_load_map: np.ndarray
    n_full: int
    _kss_factor: Optional[tuple] = None
    _kred_factor: Optional[tuple] = None

    @property
    def n_masters(self) -> int:
        return len(self.masters)

    def interior_solve(self, f_s) -> np.ndarray:
        f_s = np.asarray(f_s, dtype=float)
        if len(self.slaves) == 0:
            return np.zeros(0)
        return scipy.linalg.cho_solve(self._kss_factor, f_s, check_finite=False)

    def expand(self, u_m, u_s) -> np.ndarray:
        """Scatter master/interior displacements back onto the full DOF vector."""
        u = np.zeros(self.n_full)
        u[self.masters] = u_m
        u[self.slaves] = u_s
        return u

    def export(self, path) -> None:
        write_matrix_market(self.K_reduced, path, comment="condensed stiffness")


def condense(system: StiffnessSystem, masters: Sequence[int]) -> Superelement:
    """
    Condense ``system`` onto ``masters``.

    K_reduced = K_mm - K_ms K_ss^-1 K_sm, with recovery u_s = -K_ss^-1 K_sm u_m
    (+ K_ss^-1 f_s) and reduced load f_m - K_ms K_ss^-1 f_s.
    """
    masters = np.array(list(masters), dtype=int)
    if masters.size == 0:
        raise ValueError("master set is empty")
    if len(set(masters.tolist())) != masters.size:
        raise ValueError("master set contains duplicates")
    if np.any((masters < 0) | (masters >= system.n)):
        raise ValueError("master index out of range")
    clash = system.constrained_dofs.intersection(masters.tolist())
    if clash:
        raise ValueError(f"constrained DOFs cannot be masters: {sorted(clash)}")

    free = system.free_dofs
    is_master = np.zeros(system.n, dtype=bool)
    is_master[masters] = True
    slaves = free[~is_master[free]]

    K = system.K
    K_mm = K[np.ix_(masters, masters)]
    if slaves.size:
        K_ss = K[np.ix_(slaves, slaves)]
        K_sm = K[np.ix_(slaves, masters)]
        factor = _factor(K_ss)
        if factor is None:
            eigval, eigvec = np.linalg.eigh(K_ss)
            null = np.zeros(system.n)
            null[slaves] = eigvec[:, 0]
            raise CondensationError(
                f"interior block is singular (smallest eigenvalue {eigval[0]:.3e}); "
                "the interior contains an unconstrained mechanism",
                null_vector=null,
            )
        X = scipy.linalg.cho_solve(factor, K_sm, check_finite=False)
        recovery = -X
        K_red = K_mm - K_sm.T @ X
        load_map = -X.T
    else:
        factor = None
        recovery = np.zeros((0, masters.size))
        K_red = K_mm.copy()
        load_map = np.zeros((masters.size, 0))
    K_red = 0.5 * (K_red + K_red.T)

    return Superelement(
        K_reduced=_readonly(K_red),
        masters=_readonly(masters).astype(int),
        slaves=_readonly(slaves).astype(int),
        master_dofmap=system.dofmap.subset(masters),
        recovery_operator=_readonly(recovery),
        interior_load_map=_readonly(load_map),
        n_full=system.n,
        _kss_factor=factor,
        _kred_factor=_factor(K_red),
    )


def solve_reduced(se: Superelement, master_loads, interior_loads=None):
    """Linear static solve through the superelement; returns (u_masters, u_interior)."""
    f_m = np.asarray(master_loads, dtype=float)
    if f_m.shape != (se.n_masters,):
        raise ValueError(f"master load vector must have length {se.n_masters}")
    if interior_loads is None:
        f_s = np.zeros(len(se.slaves))
    else:
        f_s = np.asarray(interior_loads, dtype=float)
        if f_s.shape != (len(se.slaves),):
            raise ValueError(f"interior load vector must have length {len(se.slaves)}")
    if se._kred_factor is None:
        raise SingularReducedError("reduced stiffness is singular: the master set lacks sufficient constraints")
    rhs = f_m + se.interior_load_map @ f_s
    u_m = scipy.linalg.cho_solve(se._kred_factor, rhs, check_finite=False)
    u_s = se.recovery_operator @ u_m
    if f_s.size:
        u_s = u_s + se.interior_solve(f_s)
    return u_m, u_s
