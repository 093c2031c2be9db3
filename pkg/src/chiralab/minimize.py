"""Minimization of chain and grid energies over unit spins.

Three modes share one driver:

* ``Free``: H^sl over (S^2)^N.
* ``SoftG(pen)``: H^sl plus the penalty mu * lam * sum G(u^i x u^{i+1}).
* ``HardMk(pen)``: H^sl with every spin on one of the great circles q_l^perp.
  Spins are stored as (label, angle) pairs so the constraint is exact.

The objective handed to the optimizer is always the scaled energy
(divided by sqrt(2) lam delta^{3/2}); ``grad_tol`` refers to its gradient.
Pinning fixes the first two and the last two spins, which fixes the
boundary chirality vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .energies import (EnergyBreakdown, ModelParams, chain_breakdown, field_breakdown, grad_H2d,
                       grad_Hsl, grad_penalty, nnn_residuals, y_variation)
from .geometry import (FREE, PERIODIC, PinnedChirality, SpinChain, SpinField2D, bond_cross,
                       random_tangent_step)
from .optim import descend, sphere_rows
from .penalty import PenaltySpec

SWITCH_FACTOR = 10.0
PIN_TOL = 1e-8


@dataclass(frozen=True)
class Free:
    pass


@dataclass(frozen=True)
class SoftG:
    pen: PenaltySpec


@dataclass(frozen=True)
class HardMk:
    pen: PenaltySpec


Mode = Union[Free, SoftG, HardMk]


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric temperature ladder in scaled-energy units."""

    t_start: float = 1e-2
    t_end: float = 1e-6
    n_temps: int = 30
    moves_per_site: int = 2
    max_angle: float = 0.05

    def temperatures(self) -> np.ndarray:
        if self.t_start <= 0 or self.t_end <= 0:
            return np.zeros(self.n_temps)
        return np.geomspace(self.t_start, self.t_end, self.n_temps)


@dataclass
class MinimizeOptions:
    max_iters: int = 20000
    grad_tol: float = 1e-8
    step_init: float = 0.1
    mode: Mode = field(default_factory=Free)
    pin: Optional[PinnedChirality] = None
    seed: int = 0
    anneal: Optional[AnnealSchedule] = None
    method: str = "lbfgs"
    memory: int = 12
    switch_rounds: int = 8

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.method not in ("lbfgs", "pgd"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class MinimizeReport:
    final_energy: float
    scaled_energy: float
    iterations: int
    converged: bool
    grad_norm: float
    breakdown: EnergyBreakdown
    step_failure: bool = False
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        """Fields of the sweep CSV that come from a single run."""
        return {
            "energy": self.final_energy,
            "energy_scaled": self.scaled_energy,
            "well_term": self.breakdown.well_term,
            "gradient_term": self.breakdown.gradient_term,
            "penalty_term": self.breakdown.penalty_term,
            "y_variation": self.extra.get("y_variation", 0.0),
            "iterations": self.iterations,
            "converged": int(self.converged),
            "grad_norm": self.grad_norm,
        }


# --- pins -------------------------------------------------------------------------


def chirality_pins(u: np.ndarray, delta: float) -> PinnedChirality:
    """Boundary chirality vectors z^0 and z^{N-2} of a chain (last axis holds spins)."""
    s = math.sqrt(2.0 * delta)
    return PinnedChirality(np.cross(u[0], u[1]) / s, np.cross(u[-2], u[-1]) / s)


def _resolve_pins(chain: SpinChain, params: ModelParams, options: MinimizeOptions) -> Optional[PinnedChirality]:
    pin = options.pin
    if pin is None and isinstance(chain.boundary, PinnedChirality):
        pin = chain.boundary
    if pin is None:
        return None
    have = chirality_pins(chain.spins, params.delta)
    err = max(np.linalg.norm(have.left - np.asarray(pin.left)), np.linalg.norm(have.right - np.asarray(pin.right)))
    if err > PIN_TOL:
        raise ValueError(f"init boundary chirality differs from the pins by {err:.2e}")
    return pin


def _free_mask(n: int, pinned: bool, periodic: bool) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    if pinned:
        mask[:2] = False
        mask[-2:] = False
    if periodic:
        mask[-1] = False
    return mask


def _periodic_fix(u: np.ndarray) -> None:
    """In place: move u[-1] so (u[-1], u[-2]) = (u[1], u[0]) along axis 0 (any trailing batch axes)."""
    target = np.clip(np.sum(u[1] * u[0], axis=-1), -1.0, 1.0)
    a = u[-2]
    perp = u[-1] - np.sum(u[-1] * a, axis=-1, keepdims=True) * a
    n = np.linalg.norm(perp, axis=-1, keepdims=True)
    e = perp / np.where(n > 1e-14, n, 1.0)
    u[-1] = target[..., None] * a + np.sqrt(np.clip(1.0 - target * target, 0.0, None))[..., None] * e


# --- objectives and gradients ----------------------------------------------------------


def _chain_terms(u: np.ndarray, params: ModelParams, pen: Optional[PenaltySpec]) -> np.ndarray:
    """Per-stencil energy contributions (NNN term plus penalty on the stencil's first bond)."""
    r = nnn_residuals(u, params.j0 / 2.0)
    e = 0.5 * params.lam * np.sum(r * r, axis=1)
    if pen is not None:
        e = e + params.mu * params.lam * pen.G(bond_cross(u)[:-1])
    return e


def _chain_energy(u: np.ndarray, params: ModelParams, pen: Optional[PenaltySpec]) -> float:
    return float(np.sum(_chain_terms(u, params, pen)))


def _chain_grad(u: np.ndarray, params: ModelParams, pen: Optional[PenaltySpec]) -> np.ndarray:
    g = grad_Hsl(u, params)
    if pen is not None and params.mu > 0:
        g += grad_penalty(u, params, pen)
    return g


def _soft_pen(mode: Mode) -> Optional[PenaltySpec]:
    return mode.pen if isinstance(mode, SoftG) else None


def gradient(chain: SpinChain, params: ModelParams, mode: Mode = Free()) -> np.ndarray:
    """Gradient of the unscaled energy, projected on the admissible tangent directions.

    Free/SoftG: projection onto u^perp.  HardMk: projection onto q_l x u, the
    tangent of the circle each spin is labelled with.
    """
    u = chain.spins
    g = _chain_grad(u, params, _soft_pen(mode))
    if isinstance(mode, HardMk):
        pen = mode.pen
        pen.check_membership(u)
        tang = np.cross(pen.axes[pen.labels(u)], u)
        return np.sum(g * tang, axis=1, keepdims=True) * tang
    return g - np.sum(g * u, axis=1, keepdims=True) * u


def chain_energy(chain: SpinChain, params: ModelParams, mode: Mode = Free()) -> float:
    if isinstance(mode, HardMk):
        mode.pen.check_membership(chain.spins)
    return _chain_energy(chain.spins, params, _soft_pen(mode))


# --- sphere-valued chains -------------------------------------------------------------


def _result_chain(chain: SpinChain, u: np.ndarray, pins: Optional[PinnedChirality]) -> SpinChain:
    """Minimized chain; a pinned run records its pins as the boundary."""
    return SpinChain(u, chain.spacing, pins if pins is not None else chain.boundary)


def _report(chain: SpinChain, params: ModelParams, pen: Optional[PenaltySpec], res, extra=None) -> MinimizeReport:
    bd = chain_breakdown(chain, params, pen)
    return MinimizeReport(final_energy=bd.total * params.scale, scaled_energy=bd.total,
                          iterations=res.iterations, converged=res.converged, grad_norm=res.grad_norm,
                          breakdown=bd, step_failure=res.step_failure, extra=dict(extra or {}))


def minimize_chain(chain: SpinChain, params: ModelParams,
                   options: MinimizeOptions = MinimizeOptions()) -> tuple[SpinChain, MinimizeReport]:
    """Local minimization (optionally preceded by annealing) in the mode of ``options``."""
    mode = options.mode
    if options.anneal is not None:
        chain = anneal(chain, params, options)
    if isinstance(mode, HardMk):
        return minimize_hard(chain, params, mode.pen, replace(options, anneal=None))
    pen = _soft_pen(mode)
    pins = _resolve_pins(chain, params, options)
    # pinned ends already fix both scalar products
    periodic = chain.boundary == PERIODIC and pins is None
    n = chain.n_sites
    mask = _free_mask(n, pins is not None, periodic)
    proj, retr0 = sphere_rows(n, mask)
    scale = params.scale

    def retr(x, v):
        y = retr0(x, v)
        if periodic:
            yy = y.reshape(-1, 3)
            _periodic_fix(yy)
        return y

    def fg(x):
        u = x.reshape(-1, 3)
        return _chain_terms(u, params, pen) / scale, _chain_grad(u, params, pen).ravel() / scale

    x0 = chain.spins.ravel().copy()
    if periodic:
        _periodic_fix(x0.reshape(-1, 3))
    res = descend(fg, x0, proj, retr, method=options.method, max_iters=options.max_iters,
                  grad_tol=options.grad_tol, step_init=options.step_init, memory=options.memory)
    out = _result_chain(chain, res.x.reshape(-1, 3), pins)
    return out, _report(out, params, pen, res)


# --- M_k-constrained chains ---------------------------------------------------------------


def _near_intersection(u: np.ndarray, pen: PenaltySpec, tol: float) -> np.ndarray:
    pts = pen.intersections()
    if len(pts) == 0:
        return np.zeros(len(u), dtype=bool)
    d = np.linalg.norm(u[:, None, :] - pts[None, :, :], axis=-1)
    return np.min(d, axis=1) <= tol


def _local_window(i: int, n: int) -> tuple[int, int]:
    """Site range [lo, hi) whose stencils involve site i."""
    return max(0, i - 2), min(n, i + 3)


def _window_energy(u: np.ndarray, lo: int, hi: int, params: ModelParams, pen: Optional[PenaltySpec]) -> float:
    return _chain_energy(u[lo:hi], params, pen) if hi - lo >= 3 else 0.0


def _switch_pass(u: np.ndarray, labels: np.ndarray, t: np.ndarray, pen: PenaltySpec,
                 params: ModelParams, movable: np.ndarray, tol: float) -> int:
    """Greedy relabelling of near-intersection sites; accepts strict local energy drops."""
    n = len(u)
    switched = 0
    for i in np.flatnonzero(_near_intersection(u, pen, tol) & movable):
        lo, hi = _local_window(i, n)
        best = _window_energy(u, lo, hi, params, None)
        best_move = None
        keep = u[i].copy()
        for m in range(pen.k):
            if m == labels[i]:
                continue
            tm = float(pen.circle_angle(m, keep)[0])
            u[i] = pen.circle_point(np.array([m]), np.array([tm]))[0]
            e = _window_energy(u, lo, hi, params, None)
            if e < best:
                best, best_move = e, (m, tm, u[i].copy())
        if best_move is None:
            u[i] = keep
        else:
            labels[i], t[i], u[i] = best_move
            switched += 1
    return switched


def minimize_hard(chain: SpinChain, params: ModelParams, pen: PenaltySpec,
                  options: MinimizeOptions = MinimizeOptions()) -> tuple[SpinChain, MinimizeReport]:
    """Minimize H^sl over chains in M_k using per-site (label, angle) coordinates."""
    pen.check_membership(chain.spins)
    pins = _resolve_pins(chain, params, options)
    if chain.boundary == PERIODIC and pins is None:
        raise ValueError("hard-constrained minimization supports free or pinned chains only")
    n = chain.n_sites
    movable = _free_mask(n, pins is not None, False)
    labels = pen.labels(chain.spins)
    t = np.array([pen.circle_angle(l, s)[0] for l, s in zip(labels, chain.spins)])
    u = pen.circle_point(labels, t)
    if pins is not None:
        # keep pinned spins bit-identical
        u[~movable] = chain.spins[~movable]
    scale = params.scale
    tol = SWITCH_FACTOR * math.sqrt(params.delta)

    iters = 0
    switches = 0
    res = None
    for _ in range(max(1, options.switch_rounds)):
        lab = labels.copy()
        fixed_u = u[~movable].copy()

        def spins_of(x):
            v = pen.circle_point(lab, x)
            v[~movable] = fixed_u
            return v

        def fg(x):
            v = spins_of(x)
            g = grad_Hsl(v, params)
            gt = np.sum(g * np.cross(pen.axes[lab], v), axis=1)
            gt[~movable] = 0.0
            return _chain_terms(v, params, None) / scale, gt / scale

        def proj(x, g):
            out = g.copy()
            out[~movable] = 0.0
            return out

        res = descend(fg, t, proj, lambda x, v: x + v, method=options.method,
                      max_iters=max(1, options.max_iters - iters), grad_tol=options.grad_tol,
                      step_init=options.step_init, memory=options.memory)
        iters += res.iterations
        t = res.x
        u = spins_of(t)
        if pen.k < 2 or iters >= options.max_iters:
            break
        moved = _switch_pass(u, labels, t, pen, params, movable, tol)
        switches += moved
        if moved == 0:
            break
    out = _result_chain(chain, u, pins)
    extra = {"label_switches": switches, "label_changes": int(np.count_nonzero(labels[1:] != labels[:-1]))}
    rep = _report(out, params, None, res, extra)
    rep.iterations = iters
    return out, rep


# --- annealing ---------------------------------------------------------------------------


def anneal(chain: SpinChain, params: ModelParams, options: MinimizeOptions = MinimizeOptions()) -> SpinChain:
    """Metropolis over single-spin moves; returns the best configuration seen.

    Free/SoftG moves tilt a spin by a random tangent rotation; HardMk moves
    shift its angle along its own circle.  Pinned spins never move.  At
    temperature 0 only strict decreases are accepted.
    """
    sched = options.anneal or AnnealSchedule()
    mode = options.mode
    pen_soft = _soft_pen(mode)
    hard = mode.pen if isinstance(mode, HardMk) else None
    if hard is not None:
        hard.check_membership(chain.spins)
    pins = _resolve_pins(chain, params, options)
    periodic = chain.boundary == PERIODIC and pins is None
    n = chain.n_sites
    movable = np.flatnonzero(_free_mask(n, pins is not None, periodic))
    rng = np.random.default_rng(options.seed)
    u = chain.spins.copy()
    labels = hard.labels(u) if hard is not None else None
    scale = params.scale
    energy = _chain_energy(u, params, pen_soft) / scale
    best_e, best_u = energy, u.copy()
    for temp in sched.temperatures():
        for _ in range(sched.moves_per_site * len(movable)):
            i = int(movable[rng.integers(len(movable))])
            lo, hi = _local_window(i, n)
            if periodic and i in (0, 1, n - 2):
                lo, hi = 0, n
            old_i, old_last = u[i].copy(), u[-1].copy()
            e0 = _window_energy(u, lo, hi, params, pen_soft) / scale
            if hard is not None:
                ang = hard.circle_angle(labels[i], u[i])[0] + rng.uniform(-sched.max_angle, sched.max_angle)
                u[i] = hard.circle_point(labels[i:i + 1], np.array([ang]))[0]
            else:
                u[i] = random_tangent_step(rng, u[i], sched.max_angle)
            if periodic:
                _periodic_fix(u)
                if i not in (0, 1, n - 2):
                    u[-1] = old_last
            de = _window_energy(u, lo, hi, params, pen_soft) / scale - e0
            if de < 0 or (temp > 0 and rng.random() < math.exp(-de / temp)):
                energy += de
                if energy < best_e:
                    best_e, best_u = energy, u.copy()
            else:
                u[i], u[-1] = old_i, old_last
    return chain.with_spins(best_u)


# --- 2D grids ----------------------------------------------------------------------------


def minimize_2d(field_: SpinField2D, params: ModelParams, pen: Optional[PenaltySpec] = None,
                options: MinimizeOptions = MinimizeOptions()) -> tuple[SpinField2D, MinimizeReport]:
    """Minimize the grid energy (with the delta^2 lam^2 G penalty when ``pen`` is given).

    With ``options.pin`` set, the first two and last two columns along e1 are
    held fixed.  ``extra['y_variation']`` is sum lam^2 |u^{i+e2} - u^i|^2.
    """
    u0 = field_.spins
    n1, n2 = u0.shape[:2]
    mask = np.ones((n1, n2), dtype=bool)
    if options.pin is not None:
        mask[:2] = False
        mask[-2:] = False
    periodic = field_.periodic_rows and options.pin is None
    if periodic:
        mask[-1] = False
    proj, retr0 = sphere_rows(n1 * n2, mask.ravel())
    scale = params.scale

    def retr(x, v):
        y = retr0(x, v)
        if periodic:
            _periodic_fix(y.reshape(n1, n2, 3))
        return y

    def fg(x):
        u = x.reshape(n1, n2, 3)
        r = u[2:, :-1] - (params.j0 / 2.0) * u[1:-1, :-1] + u[:-2, :-1]
        dy = u[:-2, 1:] - u[:-2, :-1]
        lam2 = params.lam**2
        e = 0.5 * lam2 * np.sum(r * r, axis=-1) + 0.5 * params.j2 * lam2 * np.sum(dy * dy, axis=-1)
        if pen is not None:
            w = np.cross(u[:-2, :-1], u[1:-1, :-1]).reshape(-1, 3)
            e = e + params.delta**2 * lam2 * pen.G(w).reshape(e.shape)
        return e / scale, grad_H2d(u, params, pen).ravel() / scale

    x0 = u0.ravel().copy()
    if periodic:
        _periodic_fix(x0.reshape(n1, n2, 3))
    res = descend(fg, x0, proj, retr, method=options.method, max_iters=options.max_iters,
                  grad_tol=options.grad_tol, step_init=options.step_init, memory=options.memory)
    out = SpinField2D(res.x.reshape(n1, n2, 3), field_.spacing, field_.periodic_rows)
    bd = field_breakdown(out, params, pen)
    yv = y_variation(out, params)
    rep = MinimizeReport(final_energy=bd.total * scale, scaled_energy=bd.total, iterations=res.iterations,
                         converged=res.converged, grad_norm=res.grad_norm, breakdown=bd,
                         step_failure=res.step_failure,
                         extra={"y_variation": yv, "y_variation_scaled": yv / scale})
    return out, rep
