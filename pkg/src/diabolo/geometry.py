"""Magnet-frame to crystal-frame field decomposition.

The two-axis vector magnet supplies ``B1`` (in plane, nominally along the
hard axis x) and ``B2`` (nominally out of plane, y). The sample mounting is
described by Tait-Bryan angles: ``beta`` about z, then ``gamma`` about x',
then ``alpha`` about y''. All angles are in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spinmodel import ChainSpec


@dataclass(frozen=True)
class FieldConfig:
    """Applied field and mounting angles.

    ``alpha`` is the effective crystal angle. When constructed through
    :meth:`from_atomic`, ``alpha = alpha_atomic - alpha_tilt`` and both inputs
    are kept for the record.
    """

    B1: float
    B2: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    alpha_tilt: float = 3.0
    alpha_atomic: Optional[float] = None

    def __post_init__(self):
        for name in ("B1", "B2", "alpha", "beta", "gamma", "alpha_tilt"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        for name in ("alpha", "beta", "gamma"):
            if abs(getattr(self, name)) >= 90.0:
                raise ValueError(f"|{name}| must be below 90 degrees, got {getattr(self, name)}")

    @classmethod
    def from_atomic(cls, B1, alpha_atomic, alpha_tilt=3.0, **kwargs) -> "FieldConfig":
        return cls(B1=B1, alpha=alpha_atomic - alpha_tilt, alpha_tilt=alpha_tilt,
                   alpha_atomic=alpha_atomic, **kwargs)

    @property
    def abs_alpha(self) -> float:
        return abs(self.alpha)

    def with_field(self, B1: float, B2: Optional[float] = None) -> "FieldConfig":
        return FieldConfig(B1=B1, B2=self.B2 if B2 is None else B2, alpha=self.alpha,
                           beta=self.beta, gamma=self.gamma, alpha_tilt=self.alpha_tilt,
                           alpha_atomic=self.alpha_atomic)


def lab_to_crystal(cfg: FieldConfig) -> np.ndarray:
    """Crystal-frame field ``(B_x, B_y, B_z)`` in tesla."""
    a, b, g = np.deg2rad([cfg.alpha, cfg.beta, cfg.gamma])
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cg, sg = math.cos(g), math.sin(g)
    B1, B2 = cfg.B1, cfg.B2
    bx = B1 * (ca * cb - sa * sb * sg) + B2 * (ca * sb + sa * cb * sg)
    by = B1 * (-sb * cg) + B2 * (cb * cg)
    bz = B1 * (sa * cb + ca * sb * sg) + B2 * (sa * sb - ca * cb * sg)
    return np.array([bx, by, bz])


def rotation_matrix(cfg: FieldConfig) -> np.ndarray:
    """Matrix whose first two columns map (B1, B2) onto crystal axes."""
    a, b, g = np.deg2rad([cfg.alpha, cfg.beta, cfg.gamma])

    def rx(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def ry(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def rz(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    return ry(-a) @ rx(-g) @ rz(-b)


def simplified_field(B1: float, alpha: float, beta: float) -> np.ndarray:
    """Small-angle form with ``gamma = 0`` and ``B2 = 0``."""
    if abs(alpha) >= 90 or abs(beta) >= 90:
        raise ValueError("angles must lie strictly between -90 and 90 degrees")
    a, b = math.radians(alpha), math.radians(beta)
    return np.array([B1 * math.cos(a) * math.cos(b), -B1 * math.sin(b), B1 * math.sin(a) * math.cos(b)])


def total_site_fields(crystal_field, chain: ChainSpec, probed_site: Optional[int] = None,
                      tip_field: Optional[float] = None, z_only: bool = True) -> np.ndarray:
    """Per-site total fields, shape ``(N, 3)``.

    Without ``tip_field`` the per-site ``SiteParams.tip_field`` vectors are
    added. With ``tip_field`` (tesla, along z) the tip acts on
    ``probed_site`` only and the per-site values are ignored. ``z_only`` drops
    the in-plane tip components.
    """
    crystal_field = np.asarray(crystal_field, dtype=float)
    if crystal_field.shape != (3,):
        raise ValueError("crystal_field must be a 3-vector")
    n = chain.n_sites
    if probed_site is not None and not 0 <= probed_site < n:
        raise ValueError(f"probed_site {probed_site} out of range for {n} sites")
    fields = np.tile(crystal_field, (n, 1))
    if tip_field is not None:
        if probed_site is None:
            raise ValueError("a tip_field override needs a probed_site")
        fields[probed_site, 2] += tip_field
        return fields
    tips = np.array([s.tip_field for s in chain.sites])
    if z_only:
        tips[:, :2] = 0.0
    return fields + tips
