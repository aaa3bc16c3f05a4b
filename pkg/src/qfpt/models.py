"""The two reference systems plus custom-model deserialization.

* ``qnd2`` -- repeated nondemolition readout of a two-qubit system:
  ``H = h0 (s1z + s2z) + h1 (s1+ s2- + s1- s2+)`` with the first qubit
  monitored through ``L = s1z``.  Two one-dimensional decoherence-free
  subspaces: span(|00>) with c = -1 and span(|11>) with c = +1.

* ``ring5`` -- five qubits on a ring with nearest-neighbour flip-flop
  coupling, again monitoring the first qubit.  Each measurement sector holds a
  four-dimensional decoherence-free subspace: single-excitation (single-hole)
  standing waves that vanish on the measured site, the all-ground
  (all-excited) state, and a two-flip dark state whose hopping amplitudes onto
  the measured site cancel pairwise (:func:`ring5_dark_pair_states`).

Ring sites are numbered 0..4 with the measured qubit at site 0; the periodic
bond couples site 4 back to site 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .linalg import (
    ket_excited,
    ket_ground,
    matrix_from_pairs,
    matrix_to_pairs,
    normalized,
    sigma_minus,
    sigma_plus,
    sigma_z,
    site_operator,
    state_vector,
    vector_from_pairs,
    vector_to_pairs,
)
from .subspaces import QuantumModel

__all__ = [
    "ModelSpec",
    "build_qnd2",
    "qnd2_initial",
    "build_ring5",
    "ring5_initial",
    "ring5_dfs_states",
    "ring5_dark_pair_states",
]


def _chain_state(*single_site_kets):
    v = single_site_kets[0]
    for k in single_site_kets[1:]:
        v = np.kron(v, k)
    return v


def build_qnd2(h0=1.0, h1=1.0, zeta=1.0):
    """Two-qubit nondemolition model with the first qubit monitored."""
    s1z = site_operator(sigma_z, 0, 2)
    s2z = site_operator(sigma_z, 1, 2)
    hop = site_operator(sigma_plus, 0, 2) @ site_operator(sigma_minus, 1, 2)
    H = h0 * (s1z + s2z) + h1 * (hop + hop.conj().T)
    return QuantumModel(H=H, Ls=[s1z], zetas=[zeta])


def qnd2_initial(x0):
    """``sqrt(x0)|00> + sqrt(1-x0)|11>``: overlap ``x0`` with span(|00>)."""
    if not 0.0 <= x0 <= 1.0:
        raise ModelError(f"x0 must lie in [0, 1], got {x0}")
    ket00 = _chain_state(ket_ground, ket_ground)
    ket11 = _chain_state(ket_excited, ket_excited)
    return state_vector(math.sqrt(x0) * ket00 + math.sqrt(1.0 - x0) * ket11)


def _ring5_hamiltonian(h0, h1):
    n = 5
    H = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        H += h0 * site_operator(sigma_z, i, n)
    for i in range(n):
        j = (i + 1) % n
        hop = site_operator(sigma_plus, i, n) @ site_operator(sigma_minus, j, n)
        H += h1 * (hop + hop.conj().T)
    return H


def build_ring5(h0=1.0, h1=1.0, zeta=1.0):
    """Five-qubit ring with nearest-neighbour flip-flop coupling, site 0 monitored."""
    return QuantumModel(H=_ring5_hamiltonian(h0, h1), Ls=[site_operator(sigma_z, 0, 5)], zetas=[zeta])


def _single_flip_state(site, background, flipped):
    kets = [background] * 5
    kets[site] = flipped
    return _chain_state(*kets)


def ring5_dfs_states():
    """The six decoherence-free basis states of the ring, as two triples.

    Returns ``(q1_states, q2_states)`` where ``q1_states`` spans the c = -1
    subspace (standing waves of a single excitation over a ground background,
    plus all-ground) and ``q2_states`` the c = +1 mirror (single holes over an
    excited background, plus all-excited).  The standing-wave amplitudes
    ``sin(2 pi n / 5)`` and ``sin(4 pi n / 5)`` vanish at the measured site
    n = 0.
    """
    amp = math.sqrt(2.0 / 5.0)

    def standing_wave(momentum_factor, background, flipped):
        v = np.zeros(2**5, dtype=complex)
        for n in range(5):
            v += amp * math.sin(momentum_factor * math.pi * n / 5.0) * _single_flip_state(n, background, flipped)
        return state_vector(v)

    q11 = standing_wave(2, ket_ground, ket_excited)
    q12 = standing_wave(4, ket_ground, ket_excited)
    q13 = state_vector(_chain_state(*[ket_ground] * 5))
    q21 = standing_wave(2, ket_excited, ket_ground)
    q22 = standing_wave(4, ket_excited, ket_ground)
    q23 = state_vector(_chain_state(*[ket_excited] * 5))
    return (q11, q12, q13), (q21, q22, q23)


def ring5_dark_pair_states():
    """The two-flip dark states completing the ring's decoherence-free blocks.

    ``chi1 = (-|e1 e2> - |e1 e3> + |e2 e4> + |e3 e4>)/2`` (two excitations
    among the unmeasured sites over a ground background) is an exact
    simultaneous eigenstate of the hopping operator and of the measured
    ``sigma_z`` (eigenvalue -1) for any couplings: the four hopping amplitudes
    onto site 0 cancel pairwise.  ``chi2`` is its particle-hole mirror in the
    c = +1 sector.  Together with :func:`ring5_dfs_states` they span the full
    4+4-dimensional decoherence-free collection that subspace detection finds.
    """

    def pair(background, flipped):
        def two_flip(a, b):
            kets = [background] * 5
            kets[a] = flipped
            kets[b] = flipped
            return _chain_state(*kets)

        return state_vector(0.5 * (-two_flip(1, 2) - two_flip(1, 3) + two_flip(2, 4) + two_flip(3, 4)))

    return pair(ket_ground, ket_excited), pair(ket_excited, ket_ground)


def ring5_initial(x0):
    """``[sqrt(x0)(|q11>+|q12>) + sqrt(1-x0)(|q21>+|q22>)]/sqrt(2)``."""
    if not 0.0 <= x0 <= 1.0:
        raise ModelError(f"x0 must lie in [0, 1], got {x0}")
    (q11, q12, _), (q21, q22, _) = ring5_dfs_states()
    v = (math.sqrt(x0) * (q11 + q12) + math.sqrt(1.0 - x0) * (q21 + q22)) / math.sqrt(2.0)
    return state_vector(v)


@dataclass
class ModelSpec:
    """Declarative model description, serializable to/from CLI configs.

    ``kind`` is one of ``qnd2``, ``ring5``, or ``custom``.  The built-in kinds
    take couplings ``h0``, ``h1``, initial overlap ``x0`` and a detector
    efficiency ``zeta``.  Custom models embed ``H``, ``Ls``, ``zetas`` and the
    initial state ``psi0`` directly, with matrices serialized as nested
    row-major ``[re, im]`` pairs.
    """

    kind: str = "qnd2"
    h0: float = 1.0
    h1: float = 1.0
    x0: float = 0.1
    zeta: float = 1.0
    custom: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("qnd2", "ring5", "custom"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.kind != "custom":
            if not (0.0 < self.x0 < 1.0):
                raise ModelError(f"x0 must lie in (0, 1), got {self.x0}")
            if not (math.isfinite(self.h0) and math.isfinite(self.h1)):
                raise ModelError("couplings h0, h1 must be finite")

    def build(self):
        """Construct the :class:`QuantumModel`."""
        if self.kind == "qnd2":
            return build_qnd2(self.h0, self.h1, self.zeta)
        if self.kind == "ring5":
            return build_ring5(self.h0, self.h1, self.zeta)
        try:
            H = matrix_from_pairs(self.custom["H"])
            Ls = [matrix_from_pairs(L) for L in self.custom["Ls"]]
            zetas = self.custom.get("zetas")
        except KeyError as exc:
            raise ModelError(f"custom model payload is missing {exc}") from exc
        except ValueError as exc:
            raise ModelError(f"bad custom model payload: {exc}") from exc
        return QuantumModel(H=H, Ls=Ls, zetas=zetas)

    def initial_state(self):
        """Construct the initial state vector."""
        if self.kind == "qnd2":
            return qnd2_initial(self.x0)
        if self.kind == "ring5":
            return ring5_initial(self.x0)
        try:
            return normalized(vector_from_pairs(self.custom["psi0"]))
        except KeyError as exc:
            raise ModelError(f"custom model payload is missing {exc}") from exc
        except ValueError as exc:
            raise ModelError(f"bad custom initial state: {exc}") from exc

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "custom":
            d["custom"] = self.custom
        else:
            d.update(h0=self.h0, h1=self.h1, x0=self.x0, zeta=self.zeta)
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "qnd2")
        if kind == "custom":
            return cls(kind=kind, custom=d.get("custom", {}))
        return cls(
            kind=kind,
            h0=float(d.get("h0", 1.0)),
            h1=float(d.get("h1", 1.0)),
            x0=float(d.get("x0", 0.1)),
            zeta=float(d.get("zeta", 1.0)),
        )

    @staticmethod
    def custom_payload(H, Ls, zetas, psi0):
        """Serialize raw operators into a custom payload dict."""
        return {
            "H": matrix_to_pairs(H),
            "Ls": [matrix_to_pairs(L) for L in Ls],
            "zetas": [float(z) for z in zetas],
            "psi0": vector_to_pairs(psi0),
        }
