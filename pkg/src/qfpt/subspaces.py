"""Detection of decoherence-free subspaces and bipartitions of them.

A decoherence-free subspace (DFS) of a monitored system is a subspace on which
every measurement operator acts as a scalar and which the Hamiltonian leaves
invariant; a trajectory fully inside one evolves unitarily and never leaves.

Detection works by eigendecomposing each (normal) measurement operator,
intersecting eigenspaces across channels grouped by their joint eigenvalue
tuple, and then shrinking each common eigenspace to its largest
Hamiltonian-invariant subspace via

    S_0 = E,   S_{m+1} = S_m  ∩  { v : H v ∈ S_m },

which stabilizes in at most ``dim`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DivergenceError, ModelError
from .linalg import TOL, dagger, hermitize, max_hermiticity_defect

__all__ = [
    "QuantumModel",
    "DfsSubspace",
    "SubspacePartition",
    "find_dfs",
    "build_partition",
    "overlap",
]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuantumModel:
    """A continuously monitored system: Hamiltonian, measurement channels, efficiencies.

    Parameters
    ----------
    H : array (dim, dim)
        Hermitian Hamiltonian (hbar = 1).
    Ls : sequence of arrays (dim, dim)
        Measurement operators, one per detection channel (units rate^{1/2}).
    zetas : sequence of float
        Detector efficiency per channel, each in [0, 1].
    """

    H: np.ndarray
    Ls: tuple
    zetas: tuple

    def __init__(self, H, Ls, zetas=None):
        H = np.asarray(H, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ModelError(f"H must be square, got shape {H.shape}")
        defect = max_hermiticity_defect(H)
        if defect > TOL.hermiticity:
            raise ModelError(f"H is not Hermitian: max deviation {defect:.3e}")
        Ls = tuple(np.asarray(L, dtype=complex) for L in Ls)
        for k, L in enumerate(Ls):
            if L.shape != H.shape:
                raise ModelError(f"L[{k}] has shape {L.shape}, expected {H.shape}")
        if zetas is None:
            zetas = (1.0,) * len(Ls)
        zetas = tuple(float(z) for z in zetas)
        if len(zetas) != len(Ls):
            raise ModelError(f"got {len(zetas)} efficiencies for {len(Ls)} channels")
        for z in zetas:
            if not 0.0 <= z <= 1.0:
                raise ModelError(f"efficiency {z} outside [0, 1]")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "Ls", tuple(_frozen(L) for L in Ls))
        object.__setattr__(self, "zetas", zetas)

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def n_channels(self):
        return len(self.Ls)


@dataclass(frozen=True)
class DfsSubspace:
    """One detected decoherence-free subspace.

    ``basis`` holds an orthonormal basis as columns of a ``(dim, r)`` array;
    ``c_values[k]`` is the scalar by which measurement channel ``k`` acts on
    the subspace.
    """

    basis: np.ndarray
    c_values: tuple

    @property
    def dim(self):
        return self.basis.shape[1]


def _eigenspaces(L, tol):
    """Orthonormal eigenspace bases of a normal operator, grouped by eigenvalue.

    Returns a list of ``(eigenvalue, basis)`` with eigenvalues within ``tol``
    of each other treated as degenerate.
    """
    if max_hermiticity_defect(L) <= tol:
        evals, vecs = np.linalg.eigh(hermitize(L))
        evals = evals.astype(complex)
    else:
        # complex Schur of a normal matrix is (numerically) diagonal with a
        # unitary transform, giving orthonormal eigenvectors
        T, Z = scipy.linalg.schur(L, output="complex")
        evals, vecs = np.diag(T), Z

    order = np.lexsort((evals.imag, evals.real))
    evals, vecs = evals[order], vecs[:, order]
    groups = []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or abs(evals[i] - evals[start]) > tol:
            val = complex(evals[start:i].mean())
            groups.append((val, vecs[:, start:i]))
            start = i
    return groups


def _intersect(b1, b2, tol):
    """Orthonormal basis of the intersection of two column-spans."""
    m = b1.conj().T @ b2
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    keep = s >= 1.0 - tol
    if not np.any(keep):
        return np.empty((b1.shape[0], 0), dtype=complex)
    cols = b1 @ u[:, keep]
    q, _ = np.linalg.qr(cols)
    return q


def _largest_invariant_subspace(basis, H, tol):
    """Shrink a column-span to its largest H-invariant subspace."""
    scale = max(1.0, float(np.linalg.norm(H, 2)))
    b = basis
    while b.shape[1] > 0:
        residual = H @ b - b @ (b.conj().T @ (H @ b))
        u, s, vh = np.linalg.svd(residual, full_matrices=True)
        keep = np.ones(b.shape[1], dtype=bool)
        keep[: len(s)] = s <= tol * scale
        if np.all(keep):
            return b
        b = b @ vh.conj().T[:, keep]
        if b.shape[1]:
            b, _ = np.linalg.qr(b)
    return b


def find_dfs(model, tol=None):
    """Detect the decoherence-free subspaces of a model.

    Returns a list of :class:`DfsSubspace`, sorted by the joint eigenvalue
    tuple (real part first).  An empty list means the model has no DFS; that
    is a valid outcome, not an error.  Non-normal measurement operators are
    rejected.
    """
    tol = TOL.subspace if tol is None else tol
    for k, L in enumerate(model.Ls):
        defect = float(np.max(np.abs(L @ dagger(L) - dagger(L) @ L))) if L.size else 0.0
        if defect > tol:
            raise ModelError(
                f"measurement operator L[{k}] is not normal: max |[L, L^dag]| = {defect:.3e} > {tol}"
            )

    if model.n_channels == 0:
        return []

    # joint eigenspaces across channels, labelled by their eigenvalue tuple
    joint = [((), np.eye(model.dim, dtype=complex))]
    for L in model.Ls:
        groups = _eigenspaces(L, tol)
        refined = []
        for labels, basis in joint:
            for val, eig_basis in groups:
                inter = _intersect(basis, eig_basis, tol)
                if inter.shape[1]:
                    refined.append((labels + (val,), inter))
        joint = refined

    subspaces = []
    for labels, basis in joint:
        inv = _largest_invariant_subspace(basis, model.H, tol)
        if inv.shape[1] == 0:
            continue
        # canonical basis: eigenvectors of H restricted to the block, so the
        # reported states are simultaneous eigenstates of H and every L_k
        h_block = inv.conj().T @ model.H @ inv
        evals, rot = np.linalg.eigh(hermitize(h_block))
        inv = inv @ rot
        _check_dfs(model, inv, labels, tol)
        subspaces.append(DfsSubspace(basis=_frozen(inv), c_values=labels))

    subspaces.sort(key=lambda s: tuple((c.real, c.imag) for c in s.c_values))
    return subspaces


def _check_dfs(model, basis, c_values, tol):
    """Verify eigen-action and H-invariance of a detected subspace."""
    proj_off = np.eye(model.dim) - basis @ basis.conj().T
    for k, L in enumerate(model.Ls):
        r = float(np.max(np.linalg.norm(L @ basis - c_values[k] * basis, axis=0)))
        if r > 10 * tol:
            raise ModelError(f"detected subspace fails eigen-action on channel {k}: residual {r:.3e}")
    r = float(np.max(np.linalg.norm(proj_off @ (model.H @ basis), axis=0)))
    if r > 10 * tol:
        raise ModelError(f"detected subspace is not H-invariant: residual {r:.3e}")


@dataclass(frozen=True)
class SubspacePartition:
    """A bipartition Q = Q1 (+) Q2 of the detected DFS collection.

    ``c[k, a]`` is the (aggregated) measurement eigenvalue of channel ``k`` on
    macro-side ``a`` (0 -> Q1, 1 -> Q2).  ``gamma`` is the effective noise
    strength ``sqrt(sum_k zeta_k Re(c[k,0]-c[k,1])^2)``, and ``noise_weights``
    the signed per-channel weights ``sqrt(zeta_k) Re(c[k,0]-c[k,1])`` whose
    Euclidean norm is ``gamma`` (they matter when driving the reduced overlap
    equation with the same Wiener increments as the full master equation).

    ``closed`` records whether each macro-side carries a single Re(c) per
    channel, which is what the one-variable overlap diffusion requires; the
    analytic machinery refuses non-closed partitions.
    """

    q1_basis: np.ndarray
    q2_basis: np.ndarray
    P_Q1: np.ndarray
    P_Q2: np.ndarray
    P_P: np.ndarray
    c: np.ndarray
    gamma: float
    noise_weights: np.ndarray
    closed: bool
    zetas: tuple = field(default=())

    @property
    def dim(self):
        return self.P_Q1.shape[0]


def build_partition(model, dfs_list, select=((0,), (1,))):
    """Aggregate detected DFS blocks into the two macro-sides Q1 and Q2.

    ``select`` is a pair of disjoint, nonempty index sets into ``dfs_list``.
    The partition is always constructed; it is marked non-closed when a
    macro-side aggregates blocks with different Re(c) on some channel (the
    closed overlap diffusion then does not hold).
    """
    sel1, sel2 = (tuple(select[0]), tuple(select[1]))
    if not sel1 or not sel2:
        raise ModelError("both index sets of the bipartition must be nonempty")
    if set(sel1) & set(sel2):
        raise ModelError(f"bipartition index sets overlap: {sorted(set(sel1) & set(sel2))}")
    for i in sel1 + sel2:
        if not 0 <= i < len(dfs_list):
            raise ModelError(f"subspace index {i} out of range (have {len(dfs_list)} subspaces)")

    dim = model.dim
    b1 = np.hstack([dfs_list[i].basis for i in sel1])
    b2 = np.hstack([dfs_list[i].basis for i in sel2])
    P1 = b1 @ b1.conj().T
    P2 = b2 @ b2.conj().T
    PP = np.eye(dim, dtype=complex) - P1 - P2

    n_ch = model.n_channels
    c = np.zeros((n_ch, 2), dtype=complex)
    closed = True
    for k in range(n_ch):
        for a, sel in enumerate((sel1, sel2)):
            vals = np.array([dfs_list[i].c_values[k] for i in sel])
            if np.ptp(vals.real) > TOL.subspace:
                closed = False
            c[k, a] = vals.mean()

    weights = np.array([np.sqrt(z) * (c[k, 0] - c[k, 1]).real for k, z in enumerate(model.zetas)])
    gamma = float(np.sqrt(np.sum(weights**2)))

    return SubspacePartition(
        q1_basis=_frozen(b1),
        q2_basis=_frozen(b2),
        P_Q1=_frozen(hermitize(P1)),
        P_Q2=_frozen(hermitize(P2)),
        P_P=_frozen(hermitize(PP)),
        c=_frozen(c),
        gamma=gamma,
        noise_weights=_frozen(weights),
        closed=closed,
        zetas=model.zetas,
    )


def overlap(rho, partition):
    """Overlap ``x = tr(rho P_Q1)`` and complement weight ``tr(rho P_P)``.

    ``x`` is clamped to [0, 1] after checking it lies within 1e-9 of the
    interval; a larger excursion signals integrator divergence and raises.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != partition.P_Q1.shape:
        raise ModelError(f"dimension mismatch: rho {rho.shape} vs partition dim {partition.dim}")
    x = float(np.einsum("ij,ji->", partition.P_Q1, rho).real)
    if x < -TOL.overlap or x > 1.0 + TOL.overlap:
        raise DivergenceError(f"overlap {x!r} outside [0, 1] beyond tolerance {TOL.overlap}; integrator diverged?")
    p_comp = float(np.einsum("ij,ji->", partition.P_P, rho).real)
    return min(max(x, 0.0), 1.0), p_comp
