"""Diabolic points: closed form for one atom, gap tracking for chains.

A diabolic point (DP) is a field B_x at which the two lowest levels cross
exactly while B_z = 0. Each DP adds one quantum of S_x to the ground state,
so the ground-state quantum count at B_x is the number of DPs below it.
At each DP the ground state flips its parity under a pi rotation about x,
an exact symmetry when the field points along x.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .constants import MU_B
from .errors import DomainError, NumericalError
from .geometry import total_site_fields
from .spinmodel import ChainSpec, SiteParams, build_hamiltonian, site_operators, spin_matrices

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5) - 1) / 2
# below this dimension the two lowest levels come from dense LAPACK
_DENSE_GAP_DIM = 300


@dataclass(frozen=True)
class DiabolicPoint:
    """One located degeneracy of the two lowest levels.

    ``multiplicity`` counts how many S_x quanta enter the ground state at
    this field; it exceeds one when branches coincide (e.g. decoupled atoms).
    ``sx_quanta_after`` is ``None`` when the label is not resolvable.
    """

    B_x: float
    index_j: int
    gap_at_point: float
    sx_quanta_after: Optional[int]
    multiplicity: int = 1


def single_atom_dp(D: float, E: float, g: float, n: int = 1) -> float:
    """Closed-form field (T) of the n-th diabolic point of a single ion.

    ``n`` is odd; the DPs of spin S sit at n = 2S-1, 2S-3, ..., 1-2S. No bound
    on ``|n|`` is applied here since S does not enter the formula.
    """
    if int(n) != n or n % 2 == 0:
        raise ValueError(f"diabolic index must be an odd integer, got {n}")
    arg = 2 * E * (E - D)
    if arg < 0:
        raise DomainError(f"2E(E-D) = {arg:.4g} < 0: no real diabolic point")
    return n * math.sqrt(arg) / (g * MU_B)


def lowest_levels(chain: ChainSpec, site_fields, k: int = 2, return_vectors: bool = False):
    """The ``k`` lowest eigenvalues (and optionally eigenvectors)."""
    H = build_hamiltonian(chain, site_fields)
    dim = H.shape[0]
    k = min(k, dim)
    try:
        if dim <= _DENSE_GAP_DIM or k >= dim - 1:
            dense = H.toarray()
            if return_vectors:
                return scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
            return scipy.linalg.eigh(dense, subset_by_index=[0, k - 1], eigvals_only=True)
        n_eig = min(max(k + 2, 4), dim - 2)
        v0 = np.ones(dim) / math.sqrt(dim)
        if np.iscomplexobj(H.data):
            v0 = v0.astype(complex)
        w, v = scipy.sparse.linalg.eigsh(H, k=n_eig, which="SA", tol=1e-13, v0=v0)
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackError) as exc:
        raise NumericalError(f"lowest-level solve failed at dim {dim}: {exc}") from exc
    order = np.argsort(w)[:k]
    if return_vectors:
        return w[order], v[:, order]
    return w[order]


def _uniform_fields(chain: ChainSpec, vec) -> np.ndarray:
    return total_site_fields(np.asarray(vec, dtype=float), chain)


def gap_function(chain: ChainSpec, field_dir, B: float) -> float:
    """``E_1 - E_0`` (meV) with the external field ``B * field_dir``.

    Per-site tip fields from the chain are included.
    """
    if B < 0:
        raise ValueError("field magnitude must be non-negative")
    d = np.asarray(field_dir, dtype=float)
    d = d / np.linalg.norm(d)
    w = lowest_levels(chain, _uniform_fields(chain, B * d), k=2)
    return float(max(w[1] - w[0], 0.0))


def _parity_operator_local(spin: float) -> np.ndarray:
    return scipy.linalg.expm(1j * math.pi * spin_matrices(spin)["Sx"])


def sx_quanta(state, chain: ChainSpec, guard: float = 0.25) -> Optional[int]:
    """Number of S_x quanta in ``state`` (``None`` if mixed).

    For integer total spin the parity ``<exp(i pi sum_i S_x,i)>`` fixes
    whether the count is even or odd, and the count is the integer of that
    parity closest to ``|<sum_i S_x,i>|``. States with ``|parity| < 1 -
    2*guard`` (near an avoided crossing or with a longitudinal field) are
    mixed. Half-integer chains fall back to plain rounding with the guard band.
    """
    state = np.asarray(state)
    sx_total = sum(site_operators(chain, i)["Sx"] for i in range(chain.n_sites))
    mean_sx = abs(float(np.real(np.vdot(state, sx_total @ state))))
    two_s = int(round(2 * chain.total_spin))
    if two_s % 2:
        nearest = round(mean_sx)
        return None if abs(mean_sx - nearest) > guard else int(nearest)
    t = state.reshape(chain.dims)
    for i, site in enumerate(chain.sites):
        r = _parity_operator_local(site.spin_magnitude)
        t = np.moveaxis(np.tensordot(r, t, axes=([1], [i])), 0, i)
    # eigenvalue (-1)^M_x for total S_x projection M_x
    parity = float(np.real(np.vdot(state, t.ravel())))
    if abs(parity) < 1 - 2 * guard:
        return None
    odd = parity < 0
    base = math.floor(mean_sx)
    candidates = [c for c in (base - 1, base, base + 1, base + 2) if c >= 0 and (c % 2 == 1) == odd]
    return int(min(candidates, key=lambda c: abs(c - mean_sx)))


def ground_state_quanta(chain: ChainSpec, bx: float, dps: Optional[Sequence[DiabolicPoint]] = None,
                        resolution: float = 0.05) -> Optional[int]:
    """S_x quanta of the ground state of the symmetric reference problem
    (field ``(bx, 0, 0)`` on every site, tip fields removed).

    The count is the number of reference DPs in ``(0, bx)``, multiplicities
    included. ``dps`` may be passed to reuse a previous scan. Returns
    ``None`` when ``bx`` sits on a DP within ``1e-6`` T.
    """
    bx = abs(float(bx))
    if dps is None:
        ref = reference_chain(chain)
        dps = find_dps(ref, (0.0, bx + 2 * resolution), 0.0, resolution=resolution) if bx > 0 else []
    count = 0
    for p in dps:
        if abs(p.B_x - bx) < 1e-6:
            return None
        if p.B_x < bx:
            count += p.multiplicity
    return count


def reference_chain(chain: ChainSpec) -> ChainSpec:
    """Copy of ``chain`` with every per-site tip field removed."""
    sites = tuple(replace(s, tip_field=(0.0, 0.0, 0.0)) for s in chain.sites)
    return ChainSpec(sites=sites, couplings=chain.couplings, max_dim=chain.max_dim)


def golden_section_min(f: Callable[[float], float], a: float, b: float, xtol: float = 1e-4,
                       max_iter: int = 200) -> tuple:
    """Golden-section search for a minimum of ``f`` on ``[a, b]``.

    Returns ``(x_min, f_min)``.
    """
    if b < a:
        a, b = b, a
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def zeeman_floor(chain: ChainSpec, Bz: float) -> float:
    """Upper bound (meV) on the splitting a longitudinal field can open."""
    return 2 * sum(s.g * MU_B * s.spin_magnitude * abs(Bz + s.tip_field[2]) for s in chain.sites)


def _multiplicity(chain: ChainSpec, bx: float, bz: float, resolution: float,
                  split: float = 1e-3) -> int:
    """Number of crossings merged at ``bx``.

    A plain DP leaves a doubly degenerate ground level. Higher degeneracy
    means several branches coincide; they are separated by giving each site
    a slightly different g and counted in a narrow window.
    """
    w = lowest_levels(chain, _uniform_fields(chain, [bx, 0.0, bz]), k=min(3, chain.dim))
    if len(w) < 3 or w[2] - w[0] > 1e-6:
        return 1
    n = chain.n_sites
    sites = tuple(replace(s, g=s.g * (1 + split * (i + 1) / n)) for i, s in enumerate(chain.sites))
    split_chain = ChainSpec(sites=sites, couplings=chain.couplings, max_dim=chain.max_dim)
    lo, hi = bx * (1 - 2 * split), bx * (1 + split / n)
    step = min(resolution, bx * split / (4 * n))
    found = find_dps(split_chain, (lo, hi), bz, resolution=step, with_quanta=False)
    return max(len(found), 1)


def find_dps(chain: ChainSpec, Bx_range: tuple, Bz: Union[float, Callable[[float], float]] = 0.0,
             resolution: float = 0.05, gap_tolerance: float = 1e-6, xtol: float = 1e-4,
             with_quanta: bool = True) -> list:
    """Scan ``E_1 - E_0`` over ``B_x`` and refine every local minimum.

    ``Bz`` is a constant longitudinal field or a function of ``B_x``. At
    ``Bz == 0`` a minimum counts as a DP when its refined gap is below
    ``gap_tolerance``; with a longitudinal field every minimum below the
    Zeeman floor is reported with its residual gap. Refinement always runs to
    ``min(xtol, 1e-7)`` T so exact crossings resolve below the tolerance.
    """
    lo, hi = map(float, Bx_range)
    if not (0 <= lo < hi):
        raise ValueError("Bx_range must be increasing and non-negative")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    bz_of = Bz if callable(Bz) else (lambda _bx, _c=float(Bz): _c)
    longitudinal = any(bz_of(b) != 0 for b in (lo, 0.5 * (lo + hi), hi))

    def gap(bx):
        w = lowest_levels(chain, _uniform_fields(chain, [bx, 0.0, bz_of(bx)]), k=2)
        return float(max(w[1] - w[0], 0.0))

    n_pts = int(math.ceil((hi - lo) / resolution)) + 1
    grid = np.linspace(lo, hi, n_pts)
    gaps = np.array([gap(b) for b in grid])
    minima = [i for i in range(1, n_pts - 1) if gaps[i] <= gaps[i - 1] and gaps[i] < gaps[i + 1]]
    tol_x = min(xtol, 1e-7)
    found = []
    for i in minima:
        bx, g = golden_section_min(gap, grid[i - 1], grid[i + 1], xtol=tol_x)
        if longitudinal:
            keep = g < gap_tolerance + zeeman_floor(chain, bz_of(bx))
        else:
            keep = g < gap_tolerance
        if keep:
            found.append((bx, g))
    found.sort()
    points = []
    j = 0
    for bx, g in found:
        mult = _multiplicity(chain, bx, bz_of(bx), resolution) if with_quanta and not longitudinal else 1
        j += mult
        points.append(DiabolicPoint(B_x=float(bx), index_j=j, gap_at_point=float(g),
                                    sx_quanta_after=j if with_quanta else None, multiplicity=mult))
    return points


@dataclass(frozen=True)
class AtlasRow:
    N: int
    J_over_absD: float
    j: int
    Bx_T: float
    Bx_over_Bx3: float
    gap_meV: float
    sx_quanta_after: Optional[int]


def dp_atlas(N_list: Sequence[int], JoverD_list: Sequence[float], base_site: SiteParams,
             Bx_max: Optional[float] = None, resolution: Optional[float] = None,
             max_dim: int = 20000, n_jobs: int = 1) -> list:
    """Positive DPs at B_z = 0 for every (N, J/|D|) cell.

    The scan window defaults to ``(0, 1.05 * B_x3]`` where ``B_x3`` is the
    highest single-atom DP (index 2S-1). Cells above ``max_dim`` are skipped
    with a warning. Rows are ordered by (N, J/|D|, B_x).
    """
    n_top = int(round(2 * base_site.spin_magnitude)) - 1
    bx3 = single_atom_dp(base_site.D, base_site.E, base_site.g, n_top)
    if Bx_max is None:
        Bx_max = 1.05 * bx3
    if resolution is None:
        resolution = bx3 / 400
    cells = []
    for N in N_list:
        dim = base_site.local_dim ** N
        for r in JoverD_list:
            if dim > max_dim:
                warnings.warn(f"skipping N={N}: dimension {dim} exceeds {max_dim}", stacklevel=2)
                continue
            cells.append((N, float(r)))

    def run(cell):
        N, r = cell
        chain = ChainSpec.uniform(N, base_site, r * abs(base_site.D))
        dps = find_dps(chain, (resolution / 2, Bx_max), 0.0, resolution=resolution)
        return [AtlasRow(N, r, p.index_j, p.B_x, p.B_x / bx3, p.gap_at_point, p.sx_quanta_after)
                for p in dps]

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    rows = [row for rs in results for row in rs]
    rows.sort(key=lambda r: (r.N, r.J_over_absD, r.Bx_T))
    return rows
