"""Drift of site response distributions between recruitment iterations.

Both maps are exponent tilts ``d**e / sum(d**e)``: a time-driven shift with
exponent ``lam`` and a recruitment-driven bias with exponent
``1 + rho * (kappa - 1)``. Exponents above 1 sharpen a site's distribution
toward its majority groups, exponents below 1 flatten it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .demographics import JointDistribution, SiteModel


@dataclass(frozen=True)
class DynamicsConfig:
    lam: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.kappa > 0):
            raise ValueError("lam and kappa must be positive")

    @property
    def static(self) -> bool:
        return self.lam == 1.0 and self.kappa == 1.0


def _tilt(d, exponent: float) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if exponent <= 0:
        raise ValueError("tilt exponent must be positive")
    if exponent == 1.0:
        return d / d.sum()
    out = np.zeros_like(d)
    pos = d > 0
    # log space keeps small cells from underflowing before normalization
    logs = exponent * np.log(d[pos])
    w = np.exp(logs - logs.max())
    out[pos] = w / w.sum()
    return out


def distribution_shift(d, lam: float) -> np.ndarray:
    if lam <= 0:
        raise ValueError("lam must be positive")
    return _tilt(d, lam)


def causal_bias(d, rho: float, kappa: float) -> np.ndarray:
    if not 0.0 <= rho <= 1.0 + 1e-12:
        raise ValueError(f"allocation fraction {rho} outside [0, 1]")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return _tilt(d, 1.0 + rho * (kappa - 1.0))


def step_dynamics(site: SiteModel, rho: float) -> SiteModel:
    """Advance a site's response one iteration: bias from this round's allocation, then shift."""
    if site.lam == 1.0 and site.kappa == 1.0:
        return site
    d = distribution_shift(causal_bias(site.response.probs, rho, site.kappa), site.lam)
    return replace(site, response=JointDistribution(d, site.response.schema))
