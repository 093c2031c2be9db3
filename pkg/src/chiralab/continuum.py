"""Optimal transition profiles in continuous time.

Energies are of the form

    int (|w|^2 - 1)^2 + c G(w) dt + int |w'|^2 dt,   w = u x u',

with c = ``penalty_weight`` (1/2 by default) and the G-term dropped when no
penalty is given.  The solver works on the lift u, never on w, so the
constraint w = u x u' holds by construction.

Discretization used by ``solve_profile`` (grid t_j = -T + j h):

* w lives on midpoints, w_{j+1/2} = u_j x u_{j+1} / h;
* the well and penalty terms use the midpoint rule, |w'|^2 uses node
  differences (w_{j+1/2} - w_{j-1/2}) / h;
* on [-T, -T+2] and [T-2, T] u is a unit-speed rotation about q- / q+ with a
  free phase;
* hard (two-circle) problems pin one node to the circle intersection p and
  treat w there as passing through 0: the node term becomes
  (2/h)(|w_{s-1/2}|^2 + |w_{s+1/2}|^2).  Without it the kink of |w| at the
  switch loses O(h) energy.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.linalg import cho_solve_banded, cholesky_banded

from .energies import grad_cross_pairs
from .geometry import frame_with_axis, normalize_rows
from .optim import descend
from .penalty import PenaltySpec
from .profiles import (ContinuumProfile, apply_frame, circle_intersection, planar, tanh_profile,
                       zero_cost_profile)

FREE_S2 = "FreeS2"
HARD_MK = "HardMk"
TAIL = 2.0
DEFAULT_SEEDS = (1, 2, 3)


@dataclass
class ProfileProblem:
    q_minus: np.ndarray
    q_plus: np.ndarray
    pen: Optional[PenaltySpec] = None
    constraint: str = FREE_S2
    t_span: float = 20.0
    h: float = 5e-3
    penalty_weight: float = 0.5

    def __post_init__(self):
        self.q_minus = np.asarray(self.q_minus, dtype=float)
        self.q_plus = np.asarray(self.q_plus, dtype=float)
        for name, q in (("q_minus", self.q_minus), ("q_plus", self.q_plus)):
            if q.shape != (3,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit 3-vector")
        if not self.t_span > TAIL + 1.0:
            raise ValueError(f"t_span must exceed {TAIL + 1.0}")
        if not self.h > 0 or self.h > 0.5:
            raise ValueError("h must lie in (0, 0.5]")
        if self.constraint not in (FREE_S2, HARD_MK):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.constraint == HARD_MK and np.linalg.norm(self.q_minus - self.q_plus) < 1e-12:
            raise ValueError("a hard transition needs q- != q+")


@dataclass
class SolveOptions:
    max_iters: int = 5000
    grad_tol: float = 1e-8
    seeds: tuple = DEFAULT_SEEDS
    noise: float = 0.05
    memory: int = 20
    stall_iters: int = 100


@dataclass
class SolveInfo:
    energy: float
    certificate: float
    converged: bool
    grad_norm: float
    iterations: int
    start: str
    starts: dict = field(default_factory=dict)


# --- quadrature of a given profile --------------------------------------------------------


def continuum_energy(profile: ContinuumProfile, pen: Optional[PenaltySpec] = None,
                     penalty_weight: float = 0.5) -> float:
    """Energy of a profile from its stored w.

    (|w|^2-1)^2 and G(w) use the trapezoid rule on the nodes, |w'|^2 uses
    forward differences on each interval.  Both are second order for smooth w
    and exact through a kink located at a node, such as |w| = 0 in a
    two-circle transition.
    """
    t, w = profile.t, profile.w
    dt = np.diff(t)
    r2 = np.sum(w * w, axis=1)
    node = (r2 - 1.0) ** 2
    if pen is not None:
        node = node + penalty_weight * pen.G(w)
    trap = 0.5 * dt * (node[1:] + node[:-1])
    dw = np.diff(w, axis=0)
    grad = np.sum(dw * dw, axis=1) / dt
    return math.fsum(trap) + math.fsum(grad)


# --- discrete energy used by the solver ----------------------------------------------------


def _staggered_terms(u: np.ndarray, h: float, pen: Optional[PenaltySpec], weight: float,
                     switch: Optional[int]):
    """Per-term energies and dE/du for nodes u (M+1, 3)."""
    c = np.cross(u[:-1], u[1:])
    w = c / h
    r2 = np.sum(w * w, axis=1)
    well = h * (r2 - 1.0) ** 2
    gw = (4.0 * h * (r2 - 1.0))[:, None] * w
    terms = [well]
    if pen is not None:
        terms.append(h * weight * pen.G(w))
        gw += h * weight * pen.G_grad(w)
    dw = w[1:] - w[:-1]
    node = np.sum(dw * dw, axis=1) / h
    gdw = (2.0 / h) * dw
    if switch is not None:
        k = switch - 1  # node s sits between midpoints s-1 and s
        a, b = w[k], w[k + 1]
        node[k] = (2.0 / h) * (a @ a + b @ b)
        gdw[k] = 0.0
        gw[k] += (4.0 / h) * a
        gw[k + 1] += (4.0 / h) * b
    gw[1:] += gdw
    gw[:-1] -= gdw
    terms.append(node)
    gc = gw / h
    ga, gb = grad_cross_pairs(u[:-1], u[1:], gc)
    gu = np.zeros_like(u)
    gu[:-1] += ga
    gu[1:] += gb
    return np.concatenate(terms), gu


class _Layout:
    """Grid, tail windows and the frames of the two clamped rotations."""

    def __init__(self, prob: ProfileProblem, h: Optional[float] = None):
        # an even node count puts t = 0 on the grid (the hard switch node)
        n = 2 * max(1, int(round(prob.t_span / (h or prob.h))))
        self.t = -prob.t_span + (2.0 * prob.t_span / n) * np.arange(n + 1)
        self.h = float(self.t[1] - self.t[0])
        nt = int(round(TAIL / self.h))
        self.left = np.arange(0, nt + 1)
        self.right = np.arange(n - nt, n + 1)
        self.inner = np.arange(nt + 1, n - nt)
        self.fm = frame_with_axis(prob.q_minus)
        self.fp = frame_with_axis(prob.q_plus)
        self.qm, self.qp = prob.q_minus, prob.q_plus

    def tails(self, phi_m: float, phi_p: float):
        return (apply_frame(self.fm, planar(self.t[self.left] + phi_m)),
                apply_frame(self.fp, planar(self.t[self.right] + phi_p)))

    def phases(self, u: np.ndarray) -> tuple[float, float]:
        """Least-squares tail phases matching u at the ends of the inner region."""
        lm = u[self.left] @ self.fm
        lp = u[self.right] @ self.fp
        pm = np.angle(np.sum((lm[:, 0] + 1j * lm[:, 1]) * np.exp(-1j * self.t[self.left])))
        pp = np.angle(np.sum((lp[:, 0] + 1j * lp[:, 1]) * np.exp(-1j * self.t[self.right])))
        return float(pm), float(pp)


# --- preconditioner ---------------------------------------------------------------------------


class _BandedPrecond:
    """Inverse of (2/h^3) D2'D2 + (8/h) D1'D1 + h I restricted to a set of nodes.

    This is the Hessian of the discrete energy about a unit-speed rotation,
    written in the angle of each node; its condition number grows like h^-4,
    which is what stalls unpreconditioned descent on fine grids.
    """

    def __init__(self, n_nodes: int, nodes: np.ndarray, h: float):
        d2 = sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n_nodes - 2, n_nodes))
        d1 = sparse.diags([-1.0, 1.0], [0, 1], shape=(n_nodes - 1, n_nodes))
        full = (2.0 / h**3) * (d2.T @ d2) + (8.0 / h) * (d1.T @ d1) + h * sparse.identity(n_nodes)
        sub = full.tocsr()[nodes][:, nodes].todia()
        m = len(nodes)
        ab = np.zeros((3, m))
        for off in range(3):
            diag = sub.diagonal(off)
            ab[2 - off, off:] = diag
        self.chol = cholesky_banded(ab)
        self.diag_max = float(np.max(ab[2]))

    def solve(self, v: np.ndarray) -> np.ndarray:
        return cho_solve_banded((self.chol, False), v)


# --- free / soft solver over unit vectors ------------------------------------------------------


def _solve_sphere(prob: ProfileProblem, lay: _Layout, u_init: np.ndarray, opts: SolveOptions):
    pen = prob.pen
    ni = len(lay.inner)
    phi_m, phi_p = lay.phases(u_init)
    x0 = np.concatenate([[phi_m], u_init[lay.inner].ravel(), [phi_p]])

    def assemble(x):
        um, up = lay.tails(x[0], x[-1])
        return np.concatenate([um, x[1:-1].reshape(ni, 3), up])

    def fg(x):
        u = assemble(x)
        terms, gu = _staggered_terms(u, lay.h, pen, prob.penalty_weight, None)
        g = np.empty_like(x)
        g[0] = np.sum(gu[lay.left] * np.cross(lay.qm, u[lay.left]))
        g[-1] = np.sum(gu[lay.right] * np.cross(lay.qp, u[lay.right]))
        g[1:-1] = gu[lay.inner].ravel()
        return terms, g

    def proj(x, g):
        out = g.copy()
        v = x[1:-1].reshape(ni, 3)
        gv = out[1:-1].reshape(ni, 3)
        gv -= np.sum(gv * v, axis=1, keepdims=True) * v
        return out

    def retr(x, d):
        y = x + d
        v = y[1:-1].reshape(ni, 3)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return y

    pc = _BandedPrecond(len(lay.t), lay.inner, lay.h)

    def precond(x, g):
        out = np.empty_like(g)
        out[0], out[-1] = g[0] / pc.diag_max, g[-1] / pc.diag_max
        out[1:-1] = pc.solve(g[1:-1].reshape(ni, 3)).ravel()
        return out

    res = descend(fg, x0, proj, retr, max_iters=opts.max_iters, grad_tol=opts.grad_tol,
                  memory=opts.memory, step_init=0.05, precond=precond,
                  stall_iters=opts.stall_iters)
    return assemble(res.x), res


# --- hard solver over circle angles --------------------------------------------------------------


def _solve_hard(prob: ProfileProblem, lay: _Layout, u_init: np.ndarray, opts: SolveOptions):
    """Nodes left of the switch lie on the circle of q-, nodes right of it on that of q+."""
    n = len(lay.t)
    s = n // 2
    p = circle_intersection(prob.q_minus, prob.q_plus)
    labels = np.where(np.arange(n) < s, 0, 1)
    frames = np.stack([lay.fm, lay.fp])
    axes = np.stack([lay.qm, lay.qp])
    theta = np.empty(n)
    for l in (0, 1):
        idx = labels == l
        loc = u_init[idx] @ frames[l]
        theta[idx] = np.arctan2(loc[:, 1], loc[:, 0])
    phi_m, phi_p = lay.phases(u_init)
    free = np.setdiff1d(lay.inner, [s])
    x0 = np.concatenate([[phi_m], theta[free], [phi_p]])

    def assemble(x):
        th = np.empty(n)
        th[lay.left] = lay.t[lay.left] + x[0]
        th[lay.right] = lay.t[lay.right] + x[-1]
        th[free] = x[1:-1]
        u = np.einsum("nij,nj->ni", frames[labels], planar(th))
        u[s] = p
        return u

    def fg(x):
        u = assemble(x)
        terms, gu = _staggered_terms(u, lay.h, None, prob.penalty_weight, s)
        gt = np.sum(gu * np.cross(axes[labels], u), axis=1)
        g = np.empty_like(x)
        g[0] = np.sum(gt[lay.left])
        g[-1] = np.sum(gt[lay.right])
        g[1:-1] = gt[free]
        return terms, g

    pc = _BandedPrecond(n, free, lay.h)

    def precond(x, g):
        out = np.empty_like(g)
        out[0], out[-1] = g[0] / pc.diag_max, g[-1] / pc.diag_max
        out[1:-1] = pc.solve(g[1:-1])
        return out

    res = descend(fg, x0, lambda x, g: g, lambda x, d: x + d, max_iters=opts.max_iters,
                  grad_tol=opts.grad_tol, memory=opts.memory, step_init=0.05, precond=precond,
                  stall_iters=opts.stall_iters)
    return assemble(res.x), res


def _discrete_energy(prob: ProfileProblem, lay: _Layout, u: np.ndarray) -> float:
    switch = len(lay.t) // 2 if prob.constraint == HARD_MK else None
    terms, _ = _staggered_terms(u, lay.h, prob.pen, prob.penalty_weight, switch)
    return math.fsum(terms)


def _node_w(u: np.ndarray, h: float, switch: Optional[int]) -> np.ndarray:
    wm = np.cross(u[:-1], u[1:]) / h
    w = np.empty_like(u)
    w[1:-1] = 0.5 * (wm[1:] + wm[:-1])
    w[0], w[-1] = wm[0], wm[-1]
    if switch is not None:
        w[switch] = 0.0
    return w


# --- initial paths ---------------------------------------------------------------------------------


def _tanh_init(prob: ProfileProblem, lay: _Layout) -> np.ndarray:
    prof = tanh_profile(prob.q_minus, prob.q_plus, t_span=2 * prob.t_span, h=lay.h)
    return prof.evaluate(lay.t)


def _rotation_init(prob: ProfileProblem, lay: _Layout, rho: float) -> np.ndarray:
    """|w| = 1 path whose axis turns from q- to q+ over a window of length rho centred at 0."""
    rho = min(rho, 2 * prob.t_span - 2 * TAIL - 0.5)
    prof = zero_cost_profile(prob.q_minus, prob.q_plus, rho, t_lo=-1.0, t_hi=rho + 1.0)
    return prof.evaluate(lay.t + 0.5 * rho)


def _smooth_noise(rng: np.random.Generator, t: np.ndarray, amp: float, n_modes: int = 6) -> np.ndarray:
    lo, hi = t[0] + TAIL, t[-1] - TAIL
    x = np.clip((t - lo) / (hi - lo), 0.0, 1.0)
    out = np.zeros((len(t), 3))
    for m in range(1, n_modes + 1):
        out += np.outer(np.sin(math.pi * m * x), rng.normal(size=3)) / m
    return amp * out


def _starts(prob: ProfileProblem, lay: _Layout, opts: SolveOptions) -> list[tuple[str, np.ndarray]]:
    if prob.constraint == HARD_MK or prob.pen is not None:
        cert = ("tanh", _tanh_init(prob, lay))
    else:
        cert = ("rotation", _rotation_init(prob, lay, 2 * prob.t_span - 2 * TAIL - 0.5))
    out = [cert]
    for seed in opts.seeds:
        rng = np.random.default_rng(seed)
        if prob.constraint == HARD_MK:
            base = cert[1]
        elif prob.pen is not None:
            base = _rotation_init(prob, lay, float(rng.uniform(1.0, 8.0)))
        else:
            base = _rotation_init(prob, lay, float(rng.uniform(0.5, 1.0)) * (2 * prob.t_span - 2 * TAIL))
        u = normalize_rows(base + _smooth_noise(rng, lay.t, opts.noise))
        if prob.constraint == HARD_MK:
            u = _project_two_circles(prob, lay, u)
        out.append((f"seed{seed}", u))
    return out


def _project_two_circles(prob: ProfileProblem, lay: _Layout, u: np.ndarray) -> np.ndarray:
    n = len(lay.t)
    s = n // 2
    out = u.copy()
    for q, idx in ((prob.q_minus, slice(0, s)), (prob.q_plus, slice(s, n))):
        v = out[idx] - np.outer(out[idx] @ q, q)
        out[idx] = normalize_rows(v)
    return out


# --- public solver ---------------------------------------------------------------------------

COARSEST_H = 0.05


def _levels(h: float) -> list[float]:
    """Grid steps of the continuation, coarsest first, ending at h."""
    out = [h]
    while out[-1] * 2 <= COARSEST_H:
        out.append(out[-1] * 2)
    return out[::-1]


def _prolong(prob: ProfileProblem, coarse: _Layout, u: np.ndarray, fine: _Layout, hard: bool) -> np.ndarray:
    if not hard:
        return normalize_rows(CubicSpline(coarse.t, u, axis=0)(fine.t))
    sc, sf = len(coarse.t) // 2, len(fine.t) // 2
    out = np.empty((len(fine.t), 3))
    for frame, cidx, fidx in ((coarse.fm, slice(0, sc + 1), slice(0, sf + 1)),
                              (coarse.fp, slice(sc, None), slice(sf, None))):
        loc = u[cidx] @ frame
        ang = np.unwrap(np.arctan2(loc[:, 1], loc[:, 0]))
        out[fidx] = apply_frame(frame, planar(CubicSpline(coarse.t[cidx], ang)(fine.t[fidx])))
    out[sf] = circle_intersection(prob.q_minus, prob.q_plus)
    return out


def _solve_on(prob: ProfileProblem, lay: _Layout, u0: np.ndarray, opts: SolveOptions):
    if prob.constraint == HARD_MK:
        return _solve_hard(prob, lay, _project_two_circles(prob, lay, u0), opts)
    return _solve_sphere(prob, lay, u0, opts)


def _continuation(prob: ProfileProblem, u0: np.ndarray, opts: SolveOptions):
    """Solve on the coarsest grid from u0, then prolong and re-solve on each finer grid."""
    hard = prob.constraint == HARD_MK
    levels = _levels(prob.h)
    lay = _Layout(prob, levels[0])
    u = u0
    iters = 0
    res = None
    for k, h in enumerate(levels):
        if k > 0:
            fine = _Layout(prob, h)
            u = _prolong(prob, lay, u, fine, hard)
            lay = fine
        final = k == len(levels) - 1
        lvl_opts = opts if final else SolveOptions(opts.max_iters, max(opts.grad_tol, 1e-6), (), 0.0, opts.memory,
                                                      opts.stall_iters)
        u, res = _solve_on(prob, lay, u, lvl_opts)
        iters += res.iterations
    res.iterations = iters
    return lay, u, res


def solve_profile(prob: ProfileProblem, opts: Optional[SolveOptions] = None) -> tuple[ContinuumProfile, SolveInfo]:
    """Multi-start local minimization; returns the best profile and its discrete energy.

    Starts are the analytic certificate (tanh path for hard and soft problems,
    a slow axis rotation for free ones) and one perturbed path per seed.  Each
    start is solved by grid continuation.  If the result still lies above the
    certificate on the final grid, the certificate itself is polished there.
    """
    opts = opts or SolveOptions()
    hard = prob.constraint == HARD_MK
    coarse = _Layout(prob, _levels(prob.h)[0])
    fine = _Layout(prob, prob.h)
    best = None
    energies = {}
    for name, u0 in _starts(prob, coarse, opts):
        lay, u, res = _continuation(prob, u0, opts)
        e = _discrete_energy(prob, lay, u)
        energies[name] = e
        if best is None or e < best[0]:
            best = (e, u, res, name)
    cert_name, cert_u = _starts(prob, fine, SolveOptions(seeds=()))[0]
    cert_u = _clamp_tails(fine, cert_u, hard, prob)
    cert_e = _discrete_energy(prob, fine, cert_u)
    if best[0] > cert_e:
        u, res = _solve_on(prob, fine, cert_u, opts)
        e = _discrete_energy(prob, fine, u)
        energies[cert_name + "@fine"] = e
        best = (e, u, res, cert_name + "@fine")
    e, u, res, name = best
    switch = len(fine.t) // 2 if hard else None
    prof = ContinuumProfile(fine.t.copy(), u, _node_w(u, fine.h, switch))
    info = SolveInfo(energy=e, certificate=cert_e, converged=bool(res.converged), grad_norm=res.grad_norm,
                     iterations=res.iterations, start=name, starts=energies)
    return prof, info


def _clamp_tails(lay: _Layout, u: np.ndarray, hard: bool, prob: ProfileProblem) -> np.ndarray:
    """The start as the solver first sees it (tails replaced by fitted rotations)."""
    out = u.copy()
    pm, pp = lay.phases(u)
    out[lay.left], out[lay.right] = lay.tails(pm, pp)
    if hard:
        out[len(lay.t) // 2] = circle_intersection(prob.q_minus, prob.q_plus)
    return out


# --- h_G tables ------------------------------------------------------------------------------


@dataclass
class HGTable:
    points: np.ndarray
    values: np.ndarray
    converged: np.ndarray
    asymmetry_tol: float

    def asymmetric_pairs(self) -> list[tuple[int, int, float]]:
        """(i, j, relative gap) for pairs whose two orders differ by more than ``asymmetry_tol``."""
        out = []
        n = len(self.points)
        for i in range(n):
            for j in range(i + 1, n):
                a, b = self.values[i, j], self.values[j, i]
                gap = abs(a - b) / max(abs(a), abs(b), 1e-12)
                if gap > self.asymmetry_tol:
                    out.append((i, j, gap))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["row", "row_q", "col", "col_q", "value", "converged"])
        for i, a in enumerate(self.points):
            for j, b in enumerate(self.points):
                wr.writerow([i, _fmt_vec(a), j, _fmt_vec(b), f"{self.values[i, j]:.17g}", int(self.converged[i, j])])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fmt_vec(v) -> str:
    return " ".join(f"{x:.17g}" for x in v)


def h_G_table(pen: PenaltySpec, t_span: float = 20.0, h: float = 5e-3,
              opts: Optional[SolveOptions] = None, asymmetry_tol: float = 0.02,
              penalty_weight: float = 0.5, pool=None) -> HGTable:
    """h_G(q, q') for all ordered pairs of Q_k = {±q_l}; ``pool`` may provide a ``map``."""
    pts = pen.signed_axes()
    pairs = [(i, j) for i in range(len(pts)) for j in range(len(pts)) if i != j]
    probs = [ProfileProblem(pts[i], pts[j], pen, FREE_S2, t_span, h, penalty_weight) for i, j in pairs]
    mapper = pool.map if pool is not None else map
    results = list(mapper(_solve_value, [(p, opts) for p in probs]))
    vals = np.zeros((len(pts), len(pts)))
    conv = np.ones((len(pts), len(pts)), dtype=bool)
    for (i, j), (e, ok) in zip(pairs, results):
        vals[i, j] = e
        conv[i, j] = ok
    return HGTable(pts, vals, conv, asymmetry_tol)


def _solve_value(args) -> tuple[float, bool]:
    prob, opts = args
    _, info = solve_profile(prob, opts)
    return info.energy, info.converged
