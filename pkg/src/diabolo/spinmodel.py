"""Spin operators, the anisotropic Heisenberg chain Hamiltonian and its spectrum.

The local basis of every site is ordered ``m = +S, S-1, ..., -S`` and site 0
is the slowest index of the tensor-product basis, i.e. the full space is
``site0 (x) site1 (x) ... (x) site{N-1}``.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .constants import MU_B
from .errors import NumericalError

logger = logging.getLogger(__name__)

DEFAULT_MAX_DIM = 10**6
# above this Hilbert dimension the lowest-k iterative solver is used
DENSE_MAX_DIM = 5000


def _check_spin(spin_magnitude) -> float:
    two_s = 2 * float(spin_magnitude)
    if not np.isfinite(two_s) or two_s < 0 or abs(two_s - round(two_s)) > 1e-12:
        raise ValueError(f"spin magnitude must be a half-integer, got {spin_magnitude!r}")
    return round(two_s) / 2


@dataclass(frozen=True)
class SiteParams:
    """Single-ion parameters of one atom.

    Parameters
    ----------
    spin_magnitude : float
        Half-integer spin S.
    D, E : float
        Uniaxial and transverse anisotropy in meV.
    g : float
        g-factor.
    tip_field : tuple of 3 floats
        Static tip field on this site in tesla.
    """

    spin_magnitude: float = 2.0
    D: float = 0.0
    E: float = 0.0
    g: float = 2.0
    tip_field: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        s = _check_spin(self.spin_magnitude)
        if s <= 0:
            raise ValueError("spin magnitude must be positive")
        object.__setattr__(self, "spin_magnitude", s)
        tip = tuple(float(v) for v in self.tip_field)
        if len(tip) != 3:
            raise ValueError("tip_field must be a 3-vector")
        object.__setattr__(self, "tip_field", tip)
        for name in ("D", "E", "g"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not all(math.isfinite(v) for v in tip):
            raise ValueError("tip_field must be finite")
        if self.E < 0:
            warnings.warn(
                f"negative transverse anisotropy E={self.E}; the E >= 0 convention is assumed",
                stacklevel=3,
            )

    @property
    def local_dim(self) -> int:
        return int(round(2 * self.spin_magnitude)) + 1


@dataclass(frozen=True)
class ChainSpec:
    """An open chain of sites with nearest-neighbour exchange couplings (meV)."""

    sites: tuple
    couplings: tuple = ()
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        sites = tuple(self.sites)
        couplings = tuple(float(j) for j in self.couplings)
        if len(sites) < 1:
            raise ValueError("a chain needs at least one site")
        if not all(isinstance(s, SiteParams) for s in sites):
            raise TypeError("sites must be SiteParams instances")
        if len(couplings) != len(sites) - 1:
            raise ValueError(
                f"expected {len(sites) - 1} couplings for {len(sites)} sites, got {len(couplings)}"
            )
        if not all(math.isfinite(j) for j in couplings):
            raise ValueError("couplings must be finite")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "couplings", couplings)
        if self.dim > self.max_dim:
            raise ValueError(f"Hilbert dimension {self.dim} exceeds the cap {self.max_dim}")

    @classmethod
    def uniform(cls, n_sites: int, site: SiteParams, J: float = 0.0, **kwargs) -> "ChainSpec":
        return cls(sites=(site,) * n_sites, couplings=(J,) * (n_sites - 1), **kwargs)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def dims(self) -> tuple:
        return tuple(s.local_dim for s in self.sites)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def total_spin(self) -> float:
        return float(sum(s.spin_magnitude for s in self.sites))


@dataclass
class Spectrum:
    """Eigenpairs in ascending energy order.

    ``states[:, k]`` is the k-th eigenvector in the product S_z basis whose
    labels are ``basis_labels``. ``truncation`` is ``None`` or
    ``(kept_states, kept_amplitudes)``.
    """

    energies: np.ndarray
    states: np.ndarray
    basis_labels: list
    truncation: Optional[tuple] = None

    @property
    def n_states(self) -> int:
        return len(self.energies)

    @property
    def dim(self) -> int:
        return self.states.shape[0]


def spin_matrices(spin_magnitude) -> dict:
    """Dense angular-momentum matrices for spin S in the ``m = +S..-S`` basis.

    Returns a dict with keys ``Sz``, ``Splus``, ``Sminus``, ``Sx``, ``Sy``.
    """
    s = _check_spin(spin_magnitude)
    m = s - np.arange(int(round(2 * s)) + 1)
    sz = np.diag(m).astype(complex)
    # S+|m> = sqrt(S(S+1) - m(m+1)) |m+1>; row index of m+1 is one above m
    ladder = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    splus = np.diag(ladder, k=1).astype(complex)
    sminus = splus.conj().T
    sx = (splus + sminus) / 2
    sy = (splus - sminus) / 2j
    return {"Sz": sz, "Splus": splus, "Sminus": sminus, "Sx": sx, "Sy": sy}


def embed_site_operator(op, site: int, chain: ChainSpec) -> sp.csr_matrix:
    """Kronecker-embed a local operator acting on ``site`` into the full space."""
    dims = chain.dims
    if not 0 <= site < len(dims):
        raise ValueError(f"site {site} out of range for a chain of {len(dims)} sites")
    op = np.asarray(op.toarray() if sp.issparse(op) else op)
    if op.shape != (dims[site], dims[site]):
        raise ValueError(
            f"operator shape {op.shape} does not match local dimension {dims[site]} of site {site}"
        )
    left = int(np.prod(dims[:site]))
    right = int(np.prod(dims[site + 1:]))
    out = sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(op), format="csr")
    return sp.kron(out, sp.identity(right, format="csr"), format="csr")


@lru_cache(maxsize=32)
def _site_operator_table(dims: tuple) -> tuple:
    spins = [(d - 1) / 2 for d in dims]
    table = []
    for i, s in enumerate(spins):
        local = spin_matrices(s)
        left = int(np.prod(dims[:i]))
        right = int(np.prod(dims[i + 1:]))
        ops = {}
        for name in ("Sz", "Splus", "Sminus", "Sx"):
            mat = local[name].real
            full = sp.kron(sp.identity(left), sp.csr_matrix(mat), format="csr")
            ops[name] = sp.kron(full, sp.identity(right), format="csr")
        # S_y = i * Sy_over_i with Sy_over_i real
        ops["Sy_over_i"] = ((ops["Splus"] - ops["Sminus"]) / 2.0).tocsr() * -1.0
        table.append(ops)
    return tuple(table)


def site_operators(chain: ChainSpec, site: int) -> dict:
    """Embedded real sparse operators of one site.

    Keys are ``Sz``, ``Splus``, ``Sminus``, ``Sx`` and ``Sy_over_i`` (S_y = i * Sy_over_i).
    """
    if not 0 <= site < chain.n_sites:
        raise ValueError(f"site {site} out of range for a chain of {chain.n_sites} sites")
    return _site_operator_table(chain.dims)[site]


def site_operator(chain: ChainSpec, site: int, name: str) -> sp.csr_matrix:
    """One embedded operator; ``name`` in {x, y, z, +, -}. S_y comes back complex."""
    ops = site_operators(chain, site)
    if name == "y":
        return (1j * ops["Sy_over_i"]).tocsr()
    key = {"x": "Sx", "z": "Sz", "+": "Splus", "-": "Sminus"}[name]
    return ops[key]


def build_hamiltonian(chain: ChainSpec, site_fields) -> sp.csr_matrix:
    """Sparse Hermitian Hamiltonian in meV.

    ``site_fields[i]`` is the total field on site i (external + tip), tesla.
    The matrix is real unless some site has a finite B_y.
    """
    fields = np.asarray(site_fields, dtype=float)
    if fields.shape != (chain.n_sites, 3):
        raise ValueError(f"site_fields must have shape ({chain.n_sites}, 3), got {fields.shape}")
    if not np.all(np.isfinite(fields)):
        raise ValueError("site fields must be finite")
    dim = chain.dim
    real = sp.csr_matrix((dim, dim))
    imag = sp.csr_matrix((dim, dim))
    table = _site_operator_table(chain.dims)
    for i, site in enumerate(chain.sites):
        ops = table[i]
        bx, by, bz = fields[i] * site.g * MU_B
        real = real + bx * ops["Sx"] + bz * ops["Sz"]
        if by != 0.0:
            imag = imag + by * ops["Sy_over_i"]
        real = real + site.D * (ops["Sz"] @ ops["Sz"])
        if site.E != 0.0:
            sp2 = ops["Splus"] @ ops["Splus"]
            real = real + (site.E / 2) * (sp2 + sp2.T)
    for i, J in enumerate(chain.couplings):
        if J == 0.0:
            continue
        a, b = table[i], table[i + 1]
        real = real + J * (a["Sz"] @ b["Sz"] + 0.5 * (a["Splus"] @ b["Sminus"] + a["Sminus"] @ b["Splus"]))
    if imag.nnz:
        return (real + 1j * imag).tocsr()
    return real.tocsr()


def basis_labels(chain: ChainSpec) -> list:
    per_site = [[s.spin_magnitude - k for k in range(s.local_dim)] for s in chain.sites]
    return list(itertools.product(*per_site))


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude amplitude is real positive.

    Ties (within 1e-9 relative) resolve to the lowest basis index.
    """
    vectors = np.array(vectors, copy=True)
    mag = np.abs(vectors)
    top = mag.max(axis=0)
    idx = np.argmax(mag >= top * (1 - 1e-9), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    phases = np.where(np.abs(pivots) > 0, np.abs(pivots) / np.where(pivots == 0, 1, pivots), 1)
    if np.isrealobj(vectors):
        phases = phases.real
    return vectors * phases


def diagonalize(H, k: Optional[int] = None, labels: Optional[list] = None,
                dense_max_dim: int = DENSE_MAX_DIM) -> Spectrum:
    """Full or lowest-k eigendecomposition of a Hermitian matrix.

    Dense LAPACK is used up to ``dense_max_dim``; beyond that the lowest k
    pairs come from ARPACK.
    """
    dim = H.shape[0]
    if k is None or k >= dim:
        k = dim
    if k < 1:
        raise ValueError("k must be at least 1")
    try:
        if dim <= dense_max_dim or k >= dim - 1:
            dense = H.toarray() if sp.issparse(H) else np.asarray(H)
            if np.iscomplexobj(dense) and not np.any(dense.imag):
                dense = dense.real
            if k == dim:
                w, v = scipy.linalg.eigh(dense)
            else:
                w, v = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1], driver="evr")
        else:
            w, v = scipy.sparse.linalg.eigsh(sp.csr_matrix(H), k=k, which="SA", tol=1e-12)
            order = np.argsort(w)
            w, v = w[order], v[:, order]
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackError) as exc:
        data = H.data if sp.issparse(H) else np.asarray(H)
        raise NumericalError(
            f"eigensolver failed for dim={dim}, k={k}, max|H|={np.max(np.abs(data)):.3g}: {exc}"
        ) from exc
    if labels is not None and len(labels) != dim:
        raise ValueError("basis_labels length must equal the matrix dimension")
    return Spectrum(energies=np.asarray(w), states=fix_phases(v), basis_labels=labels)


def solve_chain(chain: ChainSpec, site_fields, k: Optional[int] = None, **kwargs) -> Spectrum:
    """Build and diagonalize in one call, attaching basis labels."""
    H = build_hamiltonian(chain, site_fields)
    return diagonalize(H, k=k, labels=basis_labels(chain), **kwargs)


def truncate_spectrum(spec: Spectrum, n_states: int = 250, n_amplitudes: int = 500) -> Spectrum:
    """Keep the lowest ``n_states`` eigenpairs and the ``n_amplitudes`` largest
    amplitudes of each, renormalized."""
    if n_states < 2:
        raise ValueError("n_states must be at least 2")
    if n_amplitudes < 1:
        raise ValueError("n_amplitudes must be at least 1")
    if n_states > spec.n_states:
        warnings.warn(
            f"requested {n_states} states but only {spec.n_states} available; clamping",
            stacklevel=2,
        )
        n_states = spec.n_states
    states = spec.states[:, :n_states]
    dim = states.shape[0]
    if n_amplitudes < dim:
        keep = np.argpartition(-np.abs(states), n_amplitudes - 1, axis=0)[:n_amplitudes]
        mask = np.zeros(states.shape, dtype=bool)
        np.put_along_axis(mask, keep, True, axis=0)
        states = np.where(mask, states, 0)
        states = states / np.linalg.norm(states, axis=0)
    else:
        states = states.copy()
    return Spectrum(
        energies=spec.energies[:n_states].copy(),
        states=states,
        basis_labels=spec.basis_labels,
        truncation=(n_states, min(n_amplitudes, dim)),
    )
