"""Discrete energies of the frustrated chain and the 2D helical model.

Index conventions: a chain of N sites has NNN stencils i = 0..N-3 (sites
i, i+1, i+2 all present); a 2D grid of shape (N1, N2) has stencils
i1 = 0..N1-3, i2 = 0..N2-2.  All sums are compensated (``math.fsum``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .geometry import PERIODIC_TOL, SpinChain, SpinField2D, bond_cosines, bond_cross
from .penalty import PenaltySpec


def fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel())


@dataclass(frozen=True)
class ModelParams:
    lam: float
    delta: float
    j2: float = 0.0
    mu: float = 0.0
    j0: Optional[float] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        if self.j2 < 0 or self.mu < 0:
            raise ValueError("j2 and mu must be non-negative")
        if self.j0 is None:
            object.__setattr__(self, "j0", 4.0 * (1.0 - self.delta))

    def _need_delta(self):
        if self.delta <= 0:
            raise ValueError("this quantity needs delta > 0")

    @property
    def alpha(self) -> float:
        self._need_delta()
        return math.acos(1.0 - self.delta) / math.sqrt(2.0 * self.delta)

    @property
    def beta(self) -> float:
        self._need_delta()
        return self.lam / math.sqrt(self.delta)

    @property
    def p(self) -> float:
        return self.mu / self.scale

    @property
    def scale(self) -> float:
        """Energy scale sqrt(2) * lambda * delta^(3/2)."""
        self._need_delta()
        return math.sqrt(2.0) * self.lam * self.delta**1.5

    @property
    def step_angle(self) -> float:
        """arccos(1 - delta), the angle between neighbours in a ground state."""
        return math.acos(1.0 - self.delta)

    def with_(self, **kw) -> "ModelParams":
        d = asdict(self)
        d.update(kw)
        if "delta" in kw and "j0" not in kw:
            d["j0"] = None
        return ModelParams(**d)


@dataclass
class EnergyBreakdown:
    total: float = 0.0
    well_term: float = 0.0
    gradient_term: float = 0.0
    penalty_term: float = 0.0
    ferro_2d_term: float = 0.0
    gamma_estimate: float = 0.0

    def lower_bound(self) -> float:
        return self.well_term + (1.0 - self.gamma_estimate) * self.gradient_term

    def upper_bound(self) -> float:
        return self.well_term + self.gradient_term

    @property
    def bound_applicable(self) -> bool:
        return self.gamma_estimate < 1.0

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name):.17g}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "EnergyBreakdown":
        names = {f.name for f in fields(cls)}
        vals = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected name=value")
            k, v = line.split("=", 1)
            k = k.strip()
            if k not in names:
                raise ValueError(f"line {lineno}: unknown field {k!r}")
            vals[k] = float(v)
        return cls(**vals)


# --- 1D ------------------------------------------------------------------------


def _check_chain(chain: SpinChain) -> np.ndarray:
    u = chain.spins
    if u.shape[0] < 3:
        raise ValueError("need at least 3 sites")
    return u


def nnn_residuals(u: np.ndarray, c: float) -> np.ndarray:
    """u^{i+2} - c u^{i+1} + u^i along the first axis."""
    return u[2:] - c * u[1:-1] + u[:-2]


def eval_Hsl(chain: SpinChain, params: ModelParams) -> float:
    u = _check_chain(chain)
    r = nnn_residuals(u, params.j0 / 2.0)
    return 0.5 * params.lam * fsum(np.sum(r * r, axis=1))


def eval_Hsl_scaled(chain: SpinChain, params: ModelParams) -> float:
    return eval_Hsl(chain, params) / params.scale


def penalty_values(u: np.ndarray, pen: PenaltySpec) -> np.ndarray:
    """G(u^i x u^{i+1}) for the bonds i = 0..N-3 that start a stencil."""
    return pen.G(bond_cross(u)[:-1])


def eval_penalty(chain: SpinChain, params: ModelParams, pen: PenaltySpec) -> float:
    u = _check_chain(chain)
    return params.mu * params.lam * fsum(penalty_values(u, pen))


def eval_Hp(chain: SpinChain, params: ModelParams, pen: PenaltySpec) -> float:
    return eval_Hsl(chain, params) + eval_penalty(chain, params, pen)


def eval_Hhard(chain: SpinChain, params: ModelParams, pen: PenaltySpec) -> float:
    pen.check_membership(chain.spins)
    return eval_Hsl(chain, params)


def rewrite1_parts(chain: SpinChain, params: ModelParams) -> tuple[float, float]:
    """Exact split of eval_Hsl into a double-well sum and a remainder (periodic chains).

    well = 2 delta^2 sum lam (|du/sqrt(2 delta)|^2 - 1)^2,
    remainder = sum lam (2 (1 - (u^{i+1},u^i)^2) - |u^{i+2} - u^i|^2 / 2).
    """
    u = _check_chain(chain)
    d = params.delta
    du2 = np.sum((u[1:-1] - u[:-2]) ** 2, axis=1)
    well = 2.0 * d * d * params.lam * fsum((du2 / (2.0 * d) - 1.0) ** 2)
    cos = np.einsum("ij,ij->i", u[1:-1], u[:-2])
    skip2 = np.sum((u[2:] - u[:-2]) ** 2, axis=1)
    rest = params.lam * fsum(2.0 * (1.0 - cos * cos) - 0.5 * skip2)
    return well, rest


def sandwich_terms(u: np.ndarray, params: ModelParams) -> tuple[float, float, float]:
    """(W, D, gamma) for a chain; no boundary requirement."""
    lam, d = params.lam, params.delta
    s2d = math.sqrt(2.0 * d)
    du2 = np.sum((u[1:-1] - u[:-2]) ** 2, axis=1)
    W = (s2d / lam) * lam * fsum((du2 / (2.0 * d) - 1.0) ** 2)
    z = bond_cross(u) / s2d
    dz = z[1:] - z[:-1]
    D = (lam / s2d) * lam * fsum(np.sum(dz * dz, axis=1) / lam**2)
    gamma = math.tan(float(np.max(np.arccos(bond_cosines(u)))))
    if gamma < 0:  # max angle beyond pi/2
        gamma = math.inf
    return W, D, gamma


def decompose_sandwich(chain: SpinChain, params: ModelParams) -> EnergyBreakdown:
    """W, D and gamma with W + (1-gamma) D <= scaled energy <= W + D (periodic chains, gamma < 1)."""
    u = _check_chain(chain)
    if abs(chain.periodic_defect()) > PERIODIC_TOL:
        raise ValueError("sandwich bounds need (u^1,u^0) = (u^{N-1},u^{N-2})")
    W, D, gamma = sandwich_terms(u, params)
    return EnergyBreakdown(total=eval_Hsl_scaled(chain, params), well_term=W, gradient_term=D,
                           gamma_estimate=gamma)


def chain_breakdown(chain: SpinChain, params: ModelParams,
                    pen: Optional[PenaltySpec] = None) -> EnergyBreakdown:
    """Scaled total (Hsl + penalty) with W, D, gamma and the scaled penalty."""
    W, D, gamma = sandwich_terms(chain.spins, params)
    pterm = eval_penalty(chain, params, pen) / params.scale if pen is not None else 0.0
    return EnergyBreakdown(total=eval_Hsl_scaled(chain, params) + pterm, well_term=W,
                           gradient_term=D, penalty_term=pterm, gamma_estimate=gamma)


class CompactnessDiagnostic(NamedTuple):
    scalar_ratio: float
    continuity_ratio: float


def compactness_diagnostic(chain: SpinChain, params: ModelParams,
                           mu_scale: float) -> CompactnessDiagnostic:
    """max |(1-delta) - (u^{i+1},u^i)| / sqrt(mu_scale) and max |z^{i+1}-z^i|^2 / sqrt(delta)."""
    if not mu_scale > 0:
        raise ValueError("mu_scale must be positive")
    u = chain.spins
    cos = np.einsum("ij,ij->i", u[1:], u[:-1])
    num = float(np.max(np.abs((1.0 - params.delta) - cos)))
    z = bond_cross(u) / math.sqrt(2.0 * params.delta)
    jump = float(np.max(np.sum((z[1:] - z[:-1]) ** 2, axis=1))) if len(z) > 1 else 0.0
    return CompactnessDiagnostic(num / math.sqrt(mu_scale), jump / math.sqrt(params.delta))


# --- 2D ------------------------------------------------------------------------


def _check_field(field: SpinField2D) -> np.ndarray:
    u = field.spins
    n1, n2 = u.shape[:2]
    if n1 < 3 or n2 < 2:
        raise ValueError(f"grid {n1}x{n2} has no interior stencil (need N1 >= 3, N2 >= 2)")
    return u


def stencil_area(shape: tuple[int, int], lam: float) -> float:
    """Sum of lambda^2 over the 2D stencil set, i.e. 1 - a_n."""
    n1, n2 = shape
    return (n1 - 2) * (n2 - 1) * lam * lam


def eval_E2d(field: SpinField2D, params: ModelParams) -> float:
    u = _check_field(field)
    base = u[:-2, :-1]
    t1 = np.einsum("abk,abk->ab", base, u[1:-1, :-1])
    t2 = np.einsum("abk,abk->ab", base, u[2:, :-1])
    t3 = np.einsum("abk,abk->ab", base, u[:-2, 1:])
    return -params.lam**2 * fsum(params.j0 * t1 - t2 + params.j2 * t3)


def min_E2d(shape: tuple[int, int], params: ModelParams) -> float:
    """Closed-form ground-state value -(1 + J0^2/8 + J2)(1 - a_n)."""
    return -(1.0 + params.j0**2 / 8.0 + params.j2) * stencil_area(shape, params.lam)


def _h2d_parts(u: np.ndarray, params: ModelParams) -> tuple[float, float]:
    r = u[2:, :-1] - (params.j0 / 2.0) * u[1:-1, :-1] + u[:-2, :-1]
    dy = u[:-2, 1:] - u[:-2, :-1]
    lam2 = params.lam**2
    return 0.5 * lam2 * fsum(np.sum(r * r, axis=-1)), 0.5 * params.j2 * lam2 * fsum(np.sum(dy * dy, axis=-1))


def eval_H2d(field: SpinField2D, params: ModelParams) -> float:
    a, b = _h2d_parts(_check_field(field), params)
    return a + b


def penalty_values_2d(u: np.ndarray, pen: PenaltySpec) -> np.ndarray:
    w = np.cross(u[:-2, :-1], u[1:-1, :-1])
    return pen.G(w.reshape(-1, 3)).reshape(w.shape[:2])


def eval_penalty_2d(field: SpinField2D, params: ModelParams, pen: PenaltySpec) -> float:
    u = _check_field(field)
    return params.delta**2 * params.lam**2 * fsum(penalty_values_2d(u, pen))


def eval_H2d_G(field: SpinField2D, params: ModelParams, pen: PenaltySpec) -> float:
    return eval_H2d(field, params) + eval_penalty_2d(field, params, pen)


def y_variation(field: SpinField2D, params: ModelParams) -> float:
    """sum lambda^2 |u^{i+e2} - u^i|^2 over the stencil set."""
    u = _check_field(field)
    dy = u[:-2, 1:] - u[:-2, :-1]
    return params.lam**2 * fsum(np.sum(dy * dy, axis=-1))


def field_breakdown(field: SpinField2D, params: ModelParams,
                    pen: Optional[PenaltySpec] = None) -> EnergyBreakdown:
    u = _check_field(field)
    e1, ey = _h2d_parts(u, params)
    pterm = eval_penalty_2d(field, params, pen) if pen is not None else 0.0
    s = params.scale
    return EnergyBreakdown(total=(e1 + ey + pterm) / s, gradient_term=e1 / s,
                           penalty_term=pterm / s, ferro_2d_term=ey / s)


# --- Euclidean gradients ----------------------------------------------------------


def grad_Hsl(u: np.ndarray, params: ModelParams) -> np.ndarray:
    c = params.j0 / 2.0
    r = params.lam * nnn_residuals(u, c)
    g = np.zeros_like(u)
    g[:-2] += r
    g[1:-1] -= c * r
    g[2:] += r
    return g


def grad_cross_pairs(a: np.ndarray, b: np.ndarray, gw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Given dE/dw for w = a x b, return (dE/da, dE/db)."""
    return np.cross(b, gw), np.cross(gw, a)


def grad_penalty(u: np.ndarray, params: ModelParams, pen: PenaltySpec) -> np.ndarray:
    a, b = u[:-2], u[1:-1]
    gw = params.mu * params.lam * pen.G_grad(np.cross(a, b))
    ga, gb = grad_cross_pairs(a, b, gw)
    g = np.zeros_like(u)
    g[:-2] += ga
    g[1:-1] += gb
    return g


def grad_H2d(u: np.ndarray, params: ModelParams, pen: Optional[PenaltySpec] = None) -> np.ndarray:
    lam2 = params.lam**2
    c = params.j0 / 2.0
    g = np.zeros_like(u)
    r = lam2 * (u[2:, :-1] - c * u[1:-1, :-1] + u[:-2, :-1])
    g[:-2, :-1] += r
    g[1:-1, :-1] -= c * r
    g[2:, :-1] += r
    dy = params.j2 * lam2 * (u[:-2, 1:] - u[:-2, :-1])
    g[:-2, 1:] += dy
    g[:-2, :-1] -= dy
    if pen is not None:
        a, b = u[:-2, :-1], u[1:-1, :-1]
        w = np.cross(a, b)
        gw = params.delta**2 * lam2 * pen.G_grad(w.reshape(-1, 3)).reshape(w.shape)
        ga, gb = grad_cross_pairs(a, b, gw)
        g[:-2, :-1] += ga
        g[1:-1, :-1] += gb
    return g
