"""Electron-driven transition rates between chain eigenstates and the
lifetimes of the two magnetization pockets.

Three electrode pairs scatter off the local spins: tip -> sample and
sample -> tip through the probed atom only, and sample -> sample (the bath)
through every atom. For an initial state i and final state f the rate of a
pair (e -> e') is

    W[f, i] = rate_scale * G_ee' / e^2 * w_ee'(i, f) * G(E_i - E_f + mu_e - mu_e')

with ``G(x) = x / (1 - exp(-x / k_B T))`` and spin weights

    w = |<f|S_z|i>|^2 + p_up_down |<f|S_+|i>|^2 + p_down_up |<f|S_-|i>|^2

where ``p_up_down`` is the probability weight for an incoming up-spin
electron leaving with spin down. With an unpolarized tip ``w`` reduces to
``sum_a |<f|S_a|i>|^2``. The tip polarization ``eta`` is along the easy axis.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

from .constants import K_B, RATE_UNIT
from .errors import NumericalError
from .geometry import FieldConfig, lab_to_crystal, total_site_fields
from .markov import mean_first_passage, stationary_distribution
from .spinmodel import (
    ChainSpec,
    Spectrum,
    build_hamiltonian,
    diagonalize,
    site_operators,
    truncate_spectrum,
)

logger = logging.getLogger(__name__)

CHANNELS = ("tip_to_sample", "sample_to_tip", "sample_to_sample")


@dataclass(frozen=True)
class TransportParams:
    """Tunnel-junction parameters.

    Parameters
    ----------
    temperature : float
        Electron temperature in K (may be elevated to mimic voltage noise).
    bias : float
        Sample bias in mV; positive bias drives electrons from tip to sample.
    current_setpoint : float
        Setpoint current in pA. Unless ``tip_conductance`` is given, the
        tip-sample conductance is ``current_setpoint / |bias|``.
    G_ss : float
        Substrate-substrate (bath) conductance in uS.
    tip_polarization : float
        Spin polarization eta of the tip, in [-1, 1].
    probed_site : int
        Index of the atom under the tip.
    tip_conductance : float, optional
        Fixed tip-sample conductance in uS (constant-height operation).
    rate_scale : float
        Dimensionless exchange-coupling calibration applied to every channel.
    """

    temperature: float = 1.3
    bias: float = 3.0
    current_setpoint: float = 10.0
    G_ss: float = 1.0
    tip_polarization: float = 0.0
    probed_site: int = 0
    tip_conductance: Optional[float] = None
    rate_scale: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if abs(self.tip_polarization) > 1:
            raise ValueError("tip polarization must lie in [-1, 1]")
        if self.G_ss < 0:
            raise ValueError("G_ss must be non-negative")
        if self.current_setpoint < 0:
            raise ValueError("current setpoint must be non-negative")
        if self.rate_scale <= 0:
            raise ValueError("rate_scale must be positive")
        if self.tip_conductance is not None and self.tip_conductance < 0:
            raise ValueError("tip conductance must be non-negative")

    @property
    def G_ts(self) -> float:
        """Tip-sample conductance in uS."""
        if self.tip_conductance is not None:
            return self.tip_conductance
        if self.bias == 0:
            return 0.0
        # pA / mV = nS
        return self.current_setpoint * 1e-3 / abs(self.bias)

    @property
    def bath_current(self) -> float:
        """Equivalent bath current I0 = G_ss k_B T / e, in pA."""
        return self.G_ss * K_B * self.temperature * 1e6 * 1e-3

    def replace(self, **changes) -> "TransportParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return TransportParams(**values)


@dataclass
class RateMatrix:
    """``rates[f, i]`` is the rate (1/s) from state i to state f."""

    rates: np.ndarray
    channels: dict
    energies: np.ndarray

    def __post_init__(self):
        np.fill_diagonal(self.rates, 0.0)

    @property
    def n_states(self) -> int:
        return self.rates.shape[0]

    def escape_rates(self) -> np.ndarray:
        return self.rates.sum(axis=0)


@dataclass
class LifetimePrediction:
    """Pocket lifetimes at one field point (seconds)."""

    T_A: float
    T_B: float
    scattering_intensity: float
    pocket_labels: list
    T_avg: float = field(init=False)
    field_crystal: Optional[np.ndarray] = None
    gap: float = float("nan")
    pocket_overlap_A: float = float("nan")
    pocket_overlap_B: float = float("nan")
    sx_quanta: Optional[int] = None

    def __post_init__(self):
        if not (self.T_A > 0 and self.T_B > 0):
            raise ValueError("lifetimes must be positive")
        self.T_avg = 1.0 / (1.0 / self.T_A + 1.0 / self.T_B)


def rate_kernel(deltaE, T: float):
    """``x / (1 - exp(-x / k_B T))`` in meV, continuous at x = 0."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    kt = K_B * T
    y = np.asarray(deltaE, dtype=float) / kt
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = np.where(np.abs(y) < 1e-12, 1.0, y / -np.expm1(-np.where(y == 0, 1.0, y)))
    out = np.where(np.isfinite(out), out, 0.0)
    result = kt * out
    return float(result) if np.ndim(result) == 0 else result


def transition_elements(spec: Spectrum, chain: ChainSpec, site: int) -> dict:
    """Matrix elements ``M[a][f, i] = <psi_f|S_{a,site}|psi_i>``.

    Keys are ``x``, ``y``, ``z``, ``+`` and ``-``.
    """
    ops = site_operators(chain, site)
    V = spec.states
    Vh = V.conj().T
    sz = Vh @ (ops["Sz"] @ V)
    splus = Vh @ (ops["Splus"] @ V)
    sminus = splus.conj().T
    return {
        "z": sz,
        "+": splus,
        "-": sminus,
        "x": (splus + sminus) / 2,
        "y": (splus - sminus) / 2j,
    }


def _squared_elements(spec: Spectrum, chain: ChainSpec, site: int) -> tuple:
    m = transition_elements(spec, chain, site)
    return np.abs(m["z"]) ** 2, np.abs(m["+"]) ** 2, np.abs(m["-"]) ** 2


def scattering_intensity(spec: Spectrum, chain: ChainSpec, site: int, i: int = 0, f: int = 1) -> float:
    """``sum_a |<psi_i|S_{a,site}|psi_f>|^2`` over a = x, y, z."""
    if i == f:
        raise ValueError("scattering intensity needs two distinct states")
    ops = site_operators(chain, site)
    vi, vf = spec.states[:, i], spec.states[:, f]
    z = np.vdot(vi, ops["Sz"] @ vf)
    plus = np.vdot(vi, ops["Splus"] @ vf)
    minus = np.vdot(vi, ops["Sminus"] @ vf)
    return float(abs(z) ** 2 + (abs(plus) ** 2 + abs(minus) ** 2) / 2)


def build_rate_matrix(spec: Spectrum, chain: ChainSpec, tp: TransportParams) -> RateMatrix:
    """Transition rates between the states kept in ``spec``."""
    E = np.asarray(spec.energies)
    n = len(E)
    # dE[f, i] = E_i - E_f, energy released by the spin system
    dE = E[None, :] - E[:, None]
    eta = tp.tip_polarization
    scale = tp.rate_scale * RATE_UNIT
    channels = {}

    z2, p2, m2 = _squared_elements(spec, chain, tp.probed_site)
    g_ts = tp.G_ts
    if g_ts > 0:
        w_ts = z2 + 0.5 * (1 + eta) * p2 + 0.5 * (1 - eta) * m2
        w_st = z2 + 0.5 * (1 - eta) * p2 + 0.5 * (1 + eta) * m2
        channels["tip_to_sample"] = scale * g_ts * w_ts * rate_kernel(dE + tp.bias, tp.temperature)
        channels["sample_to_tip"] = scale * g_ts * w_st * rate_kernel(dE - tp.bias, tp.temperature)
    else:
        channels["tip_to_sample"] = np.zeros((n, n))
        channels["sample_to_tip"] = np.zeros((n, n))

    if tp.G_ss > 0:
        w_ss = np.zeros((n, n))
        for site in range(chain.n_sites):
            if site == tp.probed_site:
                sz2, sp2, sm2 = z2, p2, m2
            else:
                sz2, sp2, sm2 = _squared_elements(spec, chain, site)
            w_ss += sz2 + 0.5 * (sp2 + sm2)
        channels["sample_to_sample"] = scale * tp.G_ss * w_ss * rate_kernel(dE, tp.temperature)
    else:
        channels["sample_to_sample"] = np.zeros((n, n))

    for W in channels.values():
        np.fill_diagonal(W, 0.0)
    total = sum(channels.values())
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite transition rates")
    return RateMatrix(rates=total, channels=channels, energies=E.copy())


def steady_state(W) -> np.ndarray:
    """Stationary populations of a :class:`RateMatrix` (or raw matrix)."""
    rates = W.rates if isinstance(W, RateMatrix) else W
    return stationary_distribution(rates)


def neel_states(chain: ChainSpec) -> tuple:
    """Basis indices of the two reference product states (N_A, N_B).

    N_A starts with ``m = -S`` on site 0; each bond with J > 0 flips the
    sign of the next site, J <= 0 keeps it. N_B is the global flip.
    """
    signs = [-1]
    for J in chain.couplings:
        signs.append(-signs[-1] if J > 0 else signs[-1])
    dims = chain.dims

    def index(sign_list):
        idx = 0
        for s, d, site in zip(sign_list, dims, chain.sites):
            # local index of m is S - m; m = -S -> d - 1, m = +S -> 0
            local = d - 1 if s < 0 else 0
            idx = idx * d + local
        return idx

    return index(signs), index([-s for s in signs])


def pocket_overlaps(spec: Spectrum, chain: ChainSpec) -> tuple:
    """``(|<N_A|psi_k>|^2, |<N_B|psi_k>|^2)`` for every kept state."""
    ia, ib = neel_states(chain)
    return np.abs(spec.states[ia, :]) ** 2, np.abs(spec.states[ib, :]) ** 2


def classify_pockets(spec: Spectrum, chain: ChainSpec, threshold: float = 0.5) -> list:
    """Label each state ``"A"``, ``"B"`` or ``"other"`` by Neel-state overlap."""
    oa, ob = pocket_overlaps(spec, chain)
    labels = []
    for a, b in zip(oa, ob):
        if a > threshold and a >= b:
            labels.append("A")
        elif b > threshold:
            labels.append("B")
        else:
            labels.append("other")
    return labels


def pocket_lifetimes(W, labels: Sequence[str], two_level: bool = False) -> tuple:
    """``(T_A, T_B)``: mean first-passage times between the pockets.

    Each passage starts in the lowest-energy state of its pocket; the state
    order of ``W`` is assumed to be ascending in energy. ``two_level=True``
    returns ``1 / W[B0, A0]`` and ``1 / W[A0, B0]`` instead.
    """
    rates = W.rates if isinstance(W, RateMatrix) else np.asarray(W, dtype=float)
    labels = list(labels)
    a_states = [k for k, lab in enumerate(labels) if lab == "A"]
    b_states = [k for k, lab in enumerate(labels) if lab == "B"]
    if not a_states or not b_states:
        raise NumericalError(
            f"need at least one A and one B state, got {len(a_states)} A and {len(b_states)} B"
        )
    a0, b0 = a_states[0], b_states[0]
    if two_level:
        return 1.0 / rates[b0, a0], 1.0 / rates[a0, b0]
    T_A = mean_first_passage(rates, a0, b_states)
    T_B = mean_first_passage(rates, b0, a_states)
    return T_A, T_B


def reference_dps(chain: ChainSpec, bx_max: float, resolution: float = 0.05) -> list:
    """DPs of the symmetric reference problem on ``(0, bx_max]``, used to
    label the S_x quanta along a sweep."""
    from .diabolic import find_dps, reference_chain

    if bx_max <= 0:
        return []
    return find_dps(reference_chain(chain), (0.0, bx_max + 2 * resolution), 0.0, resolution=resolution)


def _spectrum(chain, fields, n_states, n_amplitudes):
    spec = diagonalize(build_hamiltonian(chain, fields), k=min(n_states, chain.dim))
    if n_amplitudes is not None or spec.n_states < chain.dim:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            spec = truncate_spectrum(spec, n_states=spec.n_states,
                                     n_amplitudes=chain.dim if n_amplitudes is None else n_amplitudes)
    return spec


def crystal_field(field_cfg) -> np.ndarray:
    """Crystal-frame field of a :class:`FieldConfig` or a raw 3-vector."""
    if isinstance(field_cfg, FieldConfig):
        return lab_to_crystal(field_cfg)
    vec = np.asarray(field_cfg, dtype=float)
    if vec.shape != (3,) or not np.all(np.isfinite(vec)):
        raise ValueError("field must be a FieldConfig or a finite crystal-frame 3-vector")
    return vec


def _site_fields(chain, field_cfg, tp, probed_tip_field):
    bcrys = crystal_field(field_cfg)
    probed = tp.probed_site if probed_tip_field is not None else None
    return bcrys, total_site_fields(bcrys, chain, probed_site=probed, tip_field=probed_tip_field)


def lifetime_point(chain: ChainSpec, field_cfg: FieldConfig, tp: TransportParams,
                   n_states: int = 250, n_amplitudes: Optional[int] = None,
                   probed_tip_field: Optional[float] = None,
                   pocket_threshold: float = 0.5, quanta_dps: Optional[list] = None) -> LifetimePrediction:
    """Full pipeline at one field point.

    ``n_amplitudes`` keeps only that many largest basis amplitudes per state.
    It is off by default: the inter-pocket matrix elements near a DP live in
    the small amplitudes and vanish under aggressive truncation.
    ``quanta_dps`` (from :func:`reference_dps`) enables the S_x-quanta label.
    """
    from .diabolic import ground_state_quanta

    bcrys, fields = _site_fields(chain, field_cfg, tp, probed_tip_field)
    spec = _spectrum(chain, fields, n_states, n_amplitudes)
    W = build_rate_matrix(spec, chain, tp)
    labels = classify_pockets(spec, chain, pocket_threshold)
    T_A, T_B = pocket_lifetimes(W, labels)
    oa, ob = pocket_overlaps(spec, chain)
    quanta = None
    if quanta_dps is not None:
        quanta = ground_state_quanta(chain, bcrys[0], dps=quanta_dps)
    return LifetimePrediction(
        T_A=T_A,
        T_B=T_B,
        scattering_intensity=scattering_intensity(spec, chain, tp.probed_site, 0, 1),
        pocket_labels=labels,
        field_crystal=bcrys,
        gap=float(spec.energies[1] - spec.energies[0]),
        pocket_overlap_A=float(oa[0]),
        pocket_overlap_B=float(ob[0]),
        sx_quanta=quanta,
    )


def lifetime_curve(chain: ChainSpec, fields: Sequence[FieldConfig], tp: TransportParams,
                   n_states: int = 250, n_amplitudes: Optional[int] = None,
                   probed_tip_field: Optional[float] = None, pocket_threshold: float = 0.5,
                   n_jobs: int = 1, with_quanta: bool = True) -> list:
    """Lifetime predictions along a field sweep, in input order.

    Each entry of ``fields`` is a :class:`FieldConfig` or a crystal-frame
    field vector in tesla.
    """
    dps = None
    if with_quanta and len(fields):
        dps = reference_dps(chain, max(abs(crystal_field(c)[0]) for c in fields))

    def one(cfg):
        return lifetime_point(chain, cfg, tp, n_states=n_states, n_amplitudes=n_amplitudes,
                              probed_tip_field=probed_tip_field,
                              pocket_threshold=pocket_threshold, quanta_dps=dps)

    if n_jobs <= 1:
        return [one(cfg) for cfg in fields]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, fields))


def lifetime_grid(chain: ChainSpec, fields: Sequence, tp: TransportParams, probed_sites: Sequence[int],
                  biases: Optional[Sequence[float]] = None, n_states: int = 250,
                  n_amplitudes: Optional[int] = None, probed_tip_field: Optional[float] = None,
                  pocket_threshold: float = 0.5, n_jobs: int = 1, with_quanta: bool = True) -> dict:
    """Lifetime curves for several probed atoms and biases.

    Returns ``{(site, bias): [LifetimePrediction, ...]}`` in field order.
    One diagonalization per field serves every site and bias unless the tip
    field follows the probed atom (``probed_tip_field`` set).
    """
    biases = [tp.bias] if biases is None else [float(v) for v in biases]
    sites = [int(k) for k in probed_sites]
    for k in sites:
        if not 0 <= k < chain.n_sites:
            raise ValueError(f"probed site {k} out of range for {chain.n_sites} sites")
    dps = None
    if with_quanta and len(fields):
        dps = reference_dps(chain, max(abs(crystal_field(c)[0]) for c in fields))

    from .diabolic import ground_state_quanta

    def at_field(cfg):
        out = {}
        shared = None
        for site in sites:
            tps = tp.replace(probed_site=site)
            if probed_tip_field is not None or shared is None:
                bcrys, site_fields = _site_fields(chain, cfg, tps, probed_tip_field)
                spec = _spectrum(chain, site_fields, n_states, n_amplitudes)
                labels = classify_pockets(spec, chain, pocket_threshold)
                oa, ob = pocket_overlaps(spec, chain)
                quanta = ground_state_quanta(chain, bcrys[0], dps=dps) if dps is not None else None
                shared = (bcrys, spec, labels, oa, ob, quanta)
            bcrys, spec, labels, oa, ob, quanta = shared
            p01 = scattering_intensity(spec, chain, site, 0, 1)
            for v in biases:
                W = build_rate_matrix(spec, chain, tps.replace(bias=v))
                T_A, T_B = pocket_lifetimes(W, labels)
                out[(site, v)] = LifetimePrediction(
                    T_A=T_A, T_B=T_B, scattering_intensity=p01, pocket_labels=labels, field_crystal=bcrys,
                    gap=float(spec.energies[1] - spec.energies[0]), pocket_overlap_A=float(oa[0]),
                    pocket_overlap_B=float(ob[0]), sx_quanta=quanta)
        return out

    if n_jobs <= 1:
        per_field = [at_field(c) for c in fields]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            per_field = list(pool.map(at_field, fields))
    return {(k, v): [pf[(k, v)] for pf in per_field] for k in sites for v in biases}


def transport_sweep(chain: ChainSpec, field_cfg, tp: TransportParams, variations: Sequence[dict],
                    n_states: int = 250, n_amplitudes: Optional[int] = None,
                    probed_tip_field: Optional[float] = None, pocket_threshold: float = 0.5) -> list:
    """Lifetimes at one field for several transport settings.

    Each entry of ``variations`` holds :class:`TransportParams` overrides
    (for example ``{"bias": 4.0}``). The spectrum is computed once.
    """
    bcrys, fields = _site_fields(chain, field_cfg, tp, probed_tip_field)
    spec = _spectrum(chain, fields, n_states, n_amplitudes)
    labels = classify_pockets(spec, chain, pocket_threshold)
    oa, ob = pocket_overlaps(spec, chain)
    gap = float(spec.energies[1] - spec.energies[0])
    out = []
    for changes in variations:
        tpk = tp.replace(**changes)
        if tpk.probed_site != tp.probed_site:
            raise ValueError("the probed site cannot vary within one sweep")
        W = build_rate_matrix(spec, chain, tpk)
        T_A, T_B = pocket_lifetimes(W, labels)
        out.append(LifetimePrediction(T_A=T_A, T_B=T_B,
                                      scattering_intensity=scattering_intensity(spec, chain, tp.probed_site, 0, 1),
                                      pocket_labels=labels, field_crystal=bcrys, gap=gap,
                                      pocket_overlap_A=float(oa[0]), pocket_overlap_B=float(ob[0])))
    return out


def bias_sweep(chain: ChainSpec, field_cfg, tp: TransportParams, biases, **kwargs) -> list:
    """Lifetimes at one field for several biases (mV)."""
    return transport_sweep(chain, field_cfg, tp, [{"bias": float(v)} for v in biases], **kwargs)


def current_sweep(chain: ChainSpec, field_cfg, tp: TransportParams, currents, **kwargs) -> list:
    """Lifetimes at one field for several setpoint currents (pA)."""
    return transport_sweep(chain, field_cfg, tp, [{"current_setpoint": float(c)} for c in currents], **kwargs)


@dataclass
class CurrentFit:
    """Result of :func:`current_decomposition_fit`; rates per pA."""

    r_O: float
    r_T: float
    I0: float
    stderr: dict
    residual: float


def current_decomposition_fit(currents, T_avg, I0: Optional[float] = None) -> CurrentFit:
    """Fit ``1 / T_avg = I (r_O + r_T) + I0 r_T``.

    With free ``I0`` only the slope ``r_O + r_T`` and the intercept
    ``I0 r_T`` are identifiable from one curve, so ``I0`` must be supplied
    (for example :attr:`TransportParams.bath_current`) to split them. The
    joint multi-field form is :func:`current_decomposition_fit_multi`.
    """
    if I0 is None:
        raise ValueError("a single current series needs a known I0; use current_decomposition_fit_multi")
    currents = np.asarray(currents, dtype=float)
    rate = 1.0 / np.asarray(T_avg, dtype=float)
    if currents.size < 3:
        raise ValueError("need at least 3 current points")
    # 1/T = r_O * I + r_T * (I + I0)
    X = np.column_stack([currents, currents + I0])
    return _lstsq(X, rate, ("r_O", "r_T"), I0)


def current_decomposition_fit_multi(currents, T_avg_by_field) -> tuple:
    """Joint fit over several fields sharing ``r_O`` and ``I0``.

    ``T_avg_by_field`` has shape ``(n_fields, n_currents)``. Each field k
    contributes slope ``r_O + r_T,k`` and intercept ``I0 r_T,k``; with two or
    more fields these determine every parameter. A per-field linear fit
    seeds a nonlinear least-squares refinement on relative residuals.
    Returns ``(r_O, r_T array, I0, stderr dict)``.
    """
    currents = np.asarray(currents, dtype=float)
    T = np.atleast_2d(np.asarray(T_avg_by_field, dtype=float))
    n_f, n_i = T.shape
    if n_i < 2 or n_f < 2:
        raise ValueError("need at least 2 fields with 2 currents each")
    if np.any(~np.isfinite(T)) or np.any(T <= 0):
        raise ValueError("lifetimes must be positive and finite")
    rate = 1.0 / T
    slopes = np.empty(n_f)
    icepts = np.empty(n_f)
    for k in range(n_f):
        slopes[k], icepts[k] = np.polyfit(currents, rate[k], 1)
    # intercept_k = I0 * slope_k - I0 * r_O
    if np.ptp(slopes) <= 0:
        raise NumericalError("all fields share one slope; r_O and I0 are not separable")
    a, c = np.polyfit(slopes, icepts, 1)
    I0_guess = a if a > 0 else float(np.mean(icepts / np.maximum(slopes, 1e-300)))
    rO_guess = -c / a if a > 0 else 0.0
    rO_guess = float(np.clip(rO_guess, 0.0, 0.99 * slopes.min()))
    rT_guess = np.maximum(slopes - rO_guess, 1e-12 * slopes.max())

    scale = np.abs(rate)

    def resid(x):
        r_O, I0, r_T = x[0], x[1], x[2:]
        model = currents[None, :] * (r_O + r_T[:, None]) + I0 * r_T[:, None]
        return ((model - rate) / scale).ravel()

    x0 = np.concatenate([[rO_guess, max(I0_guess, 1e-12)], rT_guess])
    res = scipy.optimize.least_squares(resid, x0, bounds=(0.0, np.inf), x_scale="jac")
    J = res.jac
    dof = max(res.fun.size - x0.size, 1)
    sigma2 = float(res.fun @ res.fun) / dof
    try:
        cov = sigma2 * np.linalg.pinv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((x0.size, x0.size), np.nan)
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    stderr = {"r_O": float(err[0]), "I0": float(err[1]), "r_T": err[2:]}
    return float(res.x[0]), res.x[2:].copy(), float(res.x[1]), stderr


def _solve_ls(X, y):
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise NumericalError(f"rank-deficient design: rank {rank} < {X.shape[1]} parameters")
    # column scaling keeps the normal equations well conditioned
    scale = np.linalg.norm(X, axis=0)
    coef, *_ = np.linalg.lstsq(X / scale, y, rcond=None)
    coef = coef / scale
    resid = y - X @ coef
    dof = max(len(y) - X.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return coef, cov, resid


def _lstsq(X, y, names, I0):
    coef, cov, resid = _solve_ls(X, y)
    stderr = {name: float(np.sqrt(cov[k, k])) for k, name in enumerate(names)}
    return CurrentFit(r_O=float(coef[0]), r_T=float(coef[1]), I0=float(I0), stderr=stderr,
                      residual=float(np.sqrt(np.mean(resid**2))))
