"""Dense complex linear algebra for small Hilbert spaces.

Everything here operates on plain ``numpy`` arrays: operators are square
``complex128`` matrices, states are 1-d amplitude vectors.  Dimensions are
deliberately capped at :data:`MAX_DIM` (dense storage only); the systems of
interest live in dimension <= 32.

Sign convention (pinned by the tests): ``|0>`` denotes the *ground* state of a
qubit with ``sigma_z |0> = -|0>``, i.e. ``sigma_z = diag(+1, -1)`` and the
ground state is the second basis vector.  With this choice the all-ground
two-qubit subspace carries measurement eigenvalue -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAX_DIM",
    "TOL",
    "Tolerances",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "sigma_plus",
    "sigma_minus",
    "ket_ground",
    "ket_excited",
    "tensor",
    "site_operator",
    "dagger",
    "commutator",
    "hermitize",
    "expectation",
    "projector",
    "state_vector",
    "normalized",
    "pure_density",
    "density_operator",
    "max_hermiticity_defect",
    "matrix_to_pairs",
    "matrix_from_pairs",
    "vector_to_pairs",
    "vector_from_pairs",
]

#: Hard cap on Hilbert-space dimension for any constructed operator.
MAX_DIM = 64


@dataclass(frozen=True)
class Tolerances:
    """Central numerical tolerances used across the package."""

    hermiticity: float = 1e-10      # max elementwise deviation of A - A^dag
    trace: float = 1e-10            # |tr(rho) - 1|
    psd_floor: float = -1e-8        # smallest admissible density eigenvalue
    state_norm: float = 1e-12       # | ||psi|| - 1 |
    gram: float = 1e-10             # orthonormality of projector bases
    subspace: float = 1e-8          # DFS eigen/invariance residuals, grouping
    overlap: float = 1e-9           # admissible overshoot of tr(rho P)
    trace_divergence: float = 1e-3  # integrator blow-up threshold


TOL = Tolerances()

sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
sigma_y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
sigma_z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
sigma_plus = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)   # |1><0|
sigma_minus = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |0><1|

#: Ground state |0>, eigenvector of sigma_z with eigenvalue -1.
ket_ground = np.array([0.0, 1.0], dtype=complex)
#: Excited state |1>, eigenvector of sigma_z with eigenvalue +1.
ket_excited = np.array([1.0, 0.0], dtype=complex)


def _as_square(a, name="operator"):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(float))):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def tensor(*ops):
    """Kronecker product of one or more square matrices.

    Evaluated left to right in one fixed order, so repeated calls with the
    same arguments are bitwise reproducible.  Raises if the product dimension
    exceeds :data:`MAX_DIM`.
    """
    if not ops:
        raise ValueError("tensor() requires at least one operator")
    mats = [_as_square(op) for op in ops]
    dim = 1
    for m in mats:
        dim *= m.shape[0]
    if dim > MAX_DIM:
        raise ValueError(f"tensor product dimension {dim} exceeds MAX_DIM={MAX_DIM}")
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def site_operator(op, site, n_sites):
    """Embed a single-site operator at position ``site`` of an ``n_sites`` chain.

    Returns ``I (x) ... (x) op (x) ... (x) I`` with ``op`` in slot ``site``
    (0-based).
    """
    op = _as_square(op)
    if not 0 <= site < n_sites:
        raise ValueError(f"site {site} out of range for {n_sites} sites")
    d = op.shape[0]
    eye = np.eye(d, dtype=complex)
    factors = [eye] * n_sites
    factors[site] = op
    return tensor(*factors)


def dagger(a):
    """Conjugate transpose."""
    return np.asarray(a, dtype=complex).conj().T


def commutator(a, b):
    """``[a, b] = ab - ba``."""
    a = _as_square(a, "a")
    b = _as_square(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


def hermitize(a):
    """Hermitian part ``(a + a^dag)/2`` (drift repair for integrators)."""
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + a.conj().T)


def max_hermiticity_defect(a):
    """Largest elementwise deviation of ``a`` from its conjugate transpose."""
    a = np.asarray(a, dtype=complex)
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def expectation(rho, a):
    """``tr(a rho)``, the expectation value of ``a`` in state ``rho``.

    Returns a complex number; it is real (within float error) whenever ``a``
    is Hermitian and ``rho`` is a valid density operator.
    """
    rho = _as_square(rho, "rho")
    a = _as_square(a, "a")
    if rho.shape != a.shape:
        raise ValueError(f"dimension mismatch: rho {rho.shape} vs a {a.shape}")
    return complex(np.einsum("ij,ji->", a, rho))


def state_vector(amplitudes):
    """Validate a state vector: finite amplitudes, unit norm within 1e-12."""
    v = np.asarray(amplitudes, dtype=complex)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"state vector must be 1-d and nonempty, got shape {v.shape}")
    if not np.all(np.isfinite(v.view(float))):
        raise ValueError("state vector contains non-finite amplitudes")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > TOL.state_norm:
        raise ValueError(f"state vector norm {norm!r} deviates from 1 by more than {TOL.state_norm}")
    return v


def normalized(amplitudes):
    """Scale amplitudes to unit norm and validate."""
    v = np.asarray(amplitudes, dtype=complex)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return state_vector(v / norm)


def pure_density(psi):
    """Density operator ``|psi><psi|`` of a validated state vector."""
    psi = state_vector(psi)
    return np.outer(psi, psi.conj())


def density_operator(matrix):
    """Validate a density operator.

    Checks Hermiticity (max elementwise deviation 1e-10), unit trace (1e-10)
    and positive semidefiniteness (eigenvalues >= -1e-8).  Returns the matrix
    as a ``complex128`` array.
    """
    rho = _as_square(matrix, "density operator")
    defect = max_hermiticity_defect(rho)
    if defect > TOL.hermiticity:
        raise ValueError(f"density operator is not Hermitian: max deviation {defect:.3e}")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > TOL.trace:
        raise ValueError(f"density operator trace {tr!r} deviates from 1 by more than {TOL.trace}")
    evals = np.linalg.eigvalsh(hermitize(rho))
    lo = float(evals.min())
    if lo < TOL.psd_floor:
        raise ValueError(f"density operator has negative eigenvalue {lo:.3e}")
    return rho


def projector(basis):
    """Orthogonal projector ``sum_q |q><q|`` onto the span of an orthonormal basis.

    ``basis`` is a sequence of state vectors (or a ``(dim, r)`` array of
    columns).  The basis must be orthonormal: the worst deviation of its Gram
    matrix from the identity is reported if it exceeds 1e-10.
    """
    cols = np.asarray(basis, dtype=complex)
    if cols.ndim == 1:
        cols = cols[:, None]
    elif cols.ndim == 2 and cols.shape[0] < cols.shape[1]:
        # sequence-of-vectors input: rows are vectors
        cols = cols.T
    elif cols.ndim != 2:
        raise ValueError(f"basis must be a vector, list of vectors, or 2-d array, got ndim {cols.ndim}")
    gram = cols.conj().T @ cols
    worst = float(np.max(np.abs(gram - np.eye(cols.shape[1]))))
    if worst > TOL.gram:
        raise ValueError(f"basis is not orthonormal: worst Gram deviation {worst:.3e} > {TOL.gram}")
    return cols @ cols.conj().T


def basis_columns(vectors):
    """Stack a sequence of state vectors into a ``(dim, r)`` column matrix."""
    cols = np.column_stack([np.asarray(v, dtype=complex) for v in vectors])
    return cols


# --- serialization: nested arrays of [re, im] pairs, row-major ---

def matrix_to_pairs(m):
    """Serialize a matrix to nested lists of ``[re, im]`` pairs, row-major."""
    m = _as_square(m)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_pairs(data):
    """Inverse of :func:`matrix_to_pairs`."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square nested array of [re, im] pairs, got shape {arr.shape}")
    return _as_square(arr[..., 0] + 1j * arr[..., 1])


def vector_to_pairs(v):
    """Serialize a vector to a list of ``[re, im]`` pairs."""
    v = np.asarray(v, dtype=complex)
    return [[float(z.real), float(z.imag)] for z in v]


def vector_from_pairs(data):
    """Inverse of :func:`vector_to_pairs`."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected a list of [re, im] pairs, got shape {arr.shape}")
    return arr[:, 0] + 1j * arr[:, 1]
