"""Analytic continuum paths and the rule that samples them onto a lattice.

A continuum path u(t) on S^2 has angular velocity w = u x u'.  The
constructions here are all of the form "a planar rotation whose plane and
speed vary slowly", so each comes with a closed-form evaluator that can be
queried at arbitrary times; ``sample_to_lattice`` uses it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .energies import ModelParams
from .geometry import (E1, E3, PERIODIC, PERIODIC_TOL, FREE, SpinChain, antipodal_axis,
                       bond_cosines, format_rows, frame_with_axis, normalize_rows, parse_rows,
                       rotation_between, rotation_exp, rotation_log, unit)
from .penalty import PenaltySpec  # noqa: F401  (re-exported for callers)

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass
class ContinuumProfile:
    t: np.ndarray
    u: np.ndarray
    w: np.ndarray
    evaluator: Optional[Evaluator] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.u.shape != (len(self.t), 3) or self.w.shape != self.u.shape:
            raise ValueError("t, u, w must have matching lengths and 3 columns")
        if len(self.t) < 3:
            raise ValueError("a profile needs at least 3 samples")

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def evaluate(self, times: np.ndarray) -> np.ndarray:
        """u at arbitrary times; sampled-only profiles are interpolated inside their span."""
        times = np.asarray(times, dtype=float)
        if self.evaluator is not None:
            return self.evaluator(times)
        lo, hi = self.span
        if np.any(times < lo - 1e-12) or np.any(times > hi + 1e-12):
            raise ValueError(f"times outside the profile span [{lo}, {hi}]")
        spline = CubicSpline(self.t, self.u, axis=0)
        return normalize_rows(spline(times))


def finite_difference_w(t: np.ndarray, u: np.ndarray) -> np.ndarray:
    """u x u' with second-order differences (one-sided at the ends)."""
    h = t[1] - t[0]
    du = np.empty_like(u)
    du[1:-1] = (u[2:] - u[:-2]) / (2 * h)
    du[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
    du[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    return np.cross(u, du)


def time_grid(t_lo: float, t_hi: float, h: float) -> np.ndarray:
    n = max(2, int(round((t_hi - t_lo) / h)))
    return t_lo + (t_hi - t_lo) * np.arange(n + 1) / n


def profile_from_evaluator(t: np.ndarray, ev: Evaluator,
                           w_exact: Optional[Evaluator] = None) -> ContinuumProfile:
    u = ev(t)
    w = w_exact(t) if w_exact is not None else finite_difference_w(t, u)
    return ContinuumProfile(t, u, w, ev)


# --- rotation primitives ----------------------------------------------------------


def rotate_about(axis: np.ndarray, angle: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of rows of v by per-row angles about a fixed unit axis."""
    angle = np.asarray(angle, dtype=float)[..., None]
    kxv = np.cross(axis, v)
    kv = (v @ axis)[..., None]
    return v * np.cos(angle) + kxv * np.sin(angle) + axis * kv * (1.0 - np.cos(angle))


def apply_frame(frame: np.ndarray, v: np.ndarray) -> np.ndarray:
    """frame @ v per row, written elementwise so identical rows give identical bits."""
    return v[..., 0:1] * frame[:, 0] + v[..., 1:2] * frame[:, 1] + v[..., 2:3] * frame[:, 2]


def planar(phase: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(phase), np.sin(phase), np.zeros_like(phase)], axis=-1)


def pure_rotation_profile(axis, t_lo: float, t_hi: float, h: float = 1e-3,
                          phase: float = 0.0, speed: float = 1.0) -> ContinuumProfile:
    frame = frame_with_axis(axis)
    w_const = speed * unit(axis)

    def ev(t):
        return apply_frame(frame, planar(speed * np.asarray(t, dtype=float) + phase))

    def wex(t):
        return np.broadcast_to(w_const, (len(t), 3)).copy()

    return profile_from_evaluator(time_grid(t_lo, t_hi, h), ev, wex)


# --- ground states ----------------------------------------------------------------


def ground_helix(delta: float, axis_rotation: Optional[np.ndarray] = None, n_sites: int = 1001,
                 lam: float = 1e-3, phase: float = 0.0) -> SpinChain:
    """u^i = R (cos(phi i), sin(phi i), 0) with cos phi = 1 - delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    rot = np.eye(3) if axis_rotation is None else np.asarray(axis_rotation, dtype=float)
    phi = math.acos(1.0 - delta)
    spins = planar(phi * np.arange(n_sites) + phase) @ rot.T
    return SpinChain(spins, lam, PERIODIC)


# --- zero-cost rotating-axis transition ----------------------------------------------


def smoothstep5(s):
    """C^2 ramp 10 s^3 - 15 s^4 + 6 s^5 clipped to [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 + s * (-15.0 + 6.0 * s))


def smoothstep5_d(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)


def axis_log(z1, z2) -> tuple[np.ndarray, np.ndarray, float]:
    """Frame F with F e3 = z1 and the principal log (axis, angle) of A with A e3 = F^T z2."""
    frame = frame_with_axis(z1)
    a = rotation_between(E3, frame.T @ unit(z2))
    axis, angle = rotation_log(a)
    return frame, axis, angle


def zero_cost_profile(z1, z2, rho: float, t_lo: Optional[float] = None,
                      t_hi: Optional[float] = None, h: float = 1e-2,
                      ramp: Callable = smoothstep5, ramp_d: Callable = smoothstep5_d) -> ContinuumProfile:
    """u(t) = F exp(ramp(t/rho) B) (cos t, sin t, 0): w = z1 for t <= 0 and w = z2 for t >= rho."""
    if rho < 1:
        raise ValueError("rho must be at least 1")
    frame, axis, angle = axis_log(z1, z2)
    t_lo = -2.0 if t_lo is None else t_lo
    t_hi = rho + 2.0 if t_hi is None else t_hi

    def ev(t):
        t = np.asarray(t, dtype=float)
        g = ramp(t / rho)
        return apply_frame(frame, rotate_about(axis, g * angle, planar(t)))

    def wex(t):
        t = np.asarray(t, dtype=float)
        g = ramp(t / rho)
        gd = ramp_d(t / rho) / rho
        c = planar(t)
        bc = angle * np.cross(axis, c)
        v = gd[:, None] * np.cross(c, bc) + E3
        return apply_frame(frame, rotate_about(axis, g * angle, v))

    return profile_from_evaluator(time_grid(t_lo, t_hi, h), ev, wex)


# --- two-circle transitions (hard penalization) ------------------------------------


def circle_intersection(q_minus, q_plus) -> np.ndarray:
    """A common point of the great circles orthogonal to q- and q+.

    Sign rule: nonnegative first coordinate, ties broken by the second (then third).
    """
    c = np.cross(q_minus, q_plus)
    p = unit(c) if np.linalg.norm(c) > 1e-12 else antipodal_axis(unit(q_minus))
    for x in p:
        if abs(x) > 1e-12:
            return p if x > 0 else -p
    return p


@dataclass(frozen=True)
class SpeedProfile:
    """An odd speed function f and its even primitive Gamma(t) = int_0^t f."""

    f: Callable[[np.ndarray], np.ndarray]
    primitive: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]


def _log_cosh(t):
    a = np.abs(t)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


TANH_SPEED = SpeedProfile(np.tanh, _log_cosh, lambda t: 1.0 / np.cosh(t) ** 2)


def two_circle_lift(q_minus, q_plus, speed: SpeedProfile, t: np.ndarray) -> ContinuumProfile:
    """Lift of w = |f(t)| q- (t <= 0), |f(t)| q+ (t > 0) through a common circle point."""
    qm, qp = unit(q_minus), unit(q_plus)
    if np.linalg.norm(qm - qp) < 1e-12:
        raise ValueError("q- and q+ must differ")
    p = circle_intersection(qm, qp)
    fa = frame_with_axis(-qm)
    fb = frame_with_axis(qp)
    la, lb = fa.T @ p, fb.T @ p
    t0 = math.atan2(la[1], la[0])
    t1 = math.atan2(lb[1], lb[0])

    def ev(tt):
        tt = np.asarray(tt, dtype=float)
        g = speed.primitive(tt)
        left = tt <= 0
        out = np.empty((len(tt), 3))
        out[left] = apply_frame(fa, planar(g[left] + t0))
        out[~left] = apply_frame(fb, planar(g[~left] + t1))
        return out

    def wex(tt):
        tt = np.asarray(tt, dtype=float)
        s = np.abs(speed.f(tt))[:, None]
        return np.where((tt <= 0)[:, None], s * qm, s * qp)

    return profile_from_evaluator(t, ev, wex)


def tanh_profile(q_minus, q_plus, t_span: float = 12.0, h: float = 1e-3) -> ContinuumProfile:
    """Optimal hard transition with speed tanh(t) on [-t_span/2, t_span/2]."""
    return two_circle_lift(q_minus, q_plus, TANH_SPEED, time_grid(-t_span / 2, t_span / 2, h))


def _tanh_tail(a: float) -> float:
    """Energy of the tanh profile on |t| > a: 4 int_a^inf sech^4."""
    th = math.tanh(a)
    return 4.0 * (2.0 / 3.0 - th + th**3 / 3.0)


def soft_speed(epsilon: float) -> tuple[SpeedProfile, float]:
    """f_eps: tanh on [0, t_eps], cubic Hermite bridge to 1 on (t_eps, t_eps + eps), then 1."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    te = math.atanh(1.0 - epsilon)
    if _tanh_tail(te) > epsilon:
        te = brentq(lambda a: _tanh_tail(a) - epsilon, te, 40.0)
    y0, s0 = math.tanh(te), 1.0 / math.cosh(te) ** 2
    # Hermite basis on [0, eps] in local coordinate x = t - te
    e = epsilon
    coef = np.array([
        y0,
        s0,
        (3 * (1.0 - y0) - 2 * s0 * e) / e**2,
        (-2 * (1.0 - y0) + s0 * e) / e**3,
    ])
    poly = np.polynomial.Polynomial(coef)
    dpoly = poly.deriv()
    ipoly = poly.integ()
    base = float(_log_cosh(np.array(te)))
    end = base + float(ipoly(e))

    def f(t):
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        out = np.where(a <= te, np.tanh(a), np.where(a < te + e, poly(a - te), 1.0))
        return np.sign(t) * out

    def df(t):
        a = np.abs(np.asarray(t, dtype=float))
        return np.where(a <= te, 1.0 / np.cosh(a) ** 2, np.where(a < te + e, dpoly(a - te), 0.0))

    def prim(t):
        a = np.abs(np.asarray(t, dtype=float))
        return np.where(a <= te, _log_cosh(a),
                        np.where(a < te + e, base + ipoly(np.clip(a - te, 0.0, e)), end + (a - te - e)))

    return SpeedProfile(f, prim, df), te


def soft_profile(q1, q2, epsilon: float, t_span: float = 12.0, h: float = 1e-3) -> ContinuumProfile:
    speed, _ = soft_speed(epsilon)
    return two_circle_lift(q1, q2, speed, time_grid(-t_span / 2, t_span / 2, h))


# --- bridge between two nearby (u, w) states ------------------------------------------


def _hermite_kick(a: float):
    """p(s) on [0,1] with p(0)=p(1)=0, p'(0)=a, p'(1)=p''(0)=p''(1)=0, and its derivatives."""
    p = np.polynomial.Polynomial([0.0, a, 0.0, -6 * a, 8 * a, -3 * a])
    return p, p.deriv(), p.deriv(2)


def bridge(w0, w1, u0, u1, eta: float, h: float = 1e-3) -> ContinuumProfile:
    """Three-segment path from (u0, w0) to (u1, w1): speed ramp, axis rotation, speed ramp + phase."""
    if eta > 0.25:
        raise ValueError("eta above 0.25: construction not valid")
    w0, w1 = np.asarray(w0, float), np.asarray(w1, float)
    u0, u1 = unit(u0), unit(u1)
    r0, r1 = np.linalg.norm(w0), np.linalg.norm(w1)
    if r0 == 0 or r1 == 0:
        raise ValueError("w0 and w1 must be nonzero")
    if abs(u0 @ w0) > 1e-9 * r0 or abs(u1 @ w1) > 1e-9 * r1:
        raise ValueError("u_i must be orthogonal to w_i")
    if max(abs(r0 - 1), abs(r1 - 1)) > eta or np.linalg.norm(w0 - w1) > 2 * eta + 1e-15:
        raise ValueError("w0 and w1 are not within eta of a common unit axis")
    frame = frame_with_axis(w0 / r0)
    a_mat = rotation_between(E3, frame.T @ (w1 / r1))
    axis, angle = rotation_log(a_mat)
    end_frame = frame @ rotation_exp(axis, angle)
    lu0 = frame.T @ u0
    t0 = math.atan2(lu0[1], lu0[0])
    lu1 = end_frame.T @ u1
    phi1 = math.atan2(lu1[1], lu1[0])
    b = r1 - 1.0
    p0, dp0, ddp0 = _hermite_kick(r0 - 1.0)
    p2, dp2, ddp2 = _hermite_kick(-b)
    t_star = 3.0 + ((phi1 - 3.0 - t0) % (2 * math.pi)) / (1.0 + b)

    def phase2(t):
        return np.where(t <= 3.0, p2(np.clip(3.0 - t, 0.0, 1.0)), b * (t - 3.0))

    def ev(t):
        t = np.asarray(t, dtype=float)
        out = np.empty((len(t), 3))
        s0 = t <= 1.0
        s2 = t >= 2.0
        s1 = ~(s0 | s2)
        out[s0] = apply_frame(frame, planar(t[s0] + p0(np.clip(t[s0], 0.0, 1.0)) + t0))
        g = smoothstep5(t[s1] - 1.0)
        out[s1] = apply_frame(frame, rotate_about(axis, g * angle, planar(t[s1] + t0)))
        out[s2] = apply_frame(end_frame, planar(t[s2] + phase2(t[s2]) + t0))
        return out

    def wex(t):
        t = np.asarray(t, dtype=float)
        out = np.empty((len(t), 3))
        s0 = t <= 1.0
        s2 = t >= 2.0
        s1 = ~(s0 | s2)
        out[s0] = (1.0 + dp0(np.clip(t[s0], 0.0, 1.0)))[:, None] * (w0 / r0)
        g = smoothstep5(t[s1] - 1.0)
        gd = smoothstep5_d(t[s1] - 1.0)
        c = planar(t[s1] + t0)
        v = gd[:, None] * np.cross(c, angle * np.cross(axis, c)) + E3
        out[s1] = apply_frame(frame, rotate_about(axis, g * angle, v))
        d2 = np.where(t[s2] <= 3.0, -dp2(np.clip(3.0 - t[s2], 0.0, 1.0)), b)
        out[s2] = (1.0 + d2)[:, None] * (w1 / r1)
        return out

    n = max(3, int(math.ceil(t_star / h)))
    grid = t_star * np.arange(n + 1) / n
    prof = profile_from_evaluator(grid, ev, wex)
    prof.u[-1] = u1  # land exactly on the requested endpoint
    return prof


# --- lattice sampling ------------------------------------------------------------------


def default_sites(lam: float) -> int:
    """|Z_n(I)| = #{i : lam i in [0, 1]}."""
    return int(math.floor(1.0 / lam + 1e-9)) + 1


def lattice_times(lam: float, delta: float, center: float, n_sites: int) -> np.ndarray:
    """alpha sqrt(2 delta)/lam (lam i - center) = arccos(1-delta) (i - center/lam)."""
    phi = math.acos(1.0 - delta)
    return phi * (np.arange(n_sites) - center / lam)


def sample_to_lattice(profile: ContinuumProfile, lam: float, delta: float, center: float = 0.5,
                      n_sites: Optional[int] = None) -> SpinChain:
    n = default_sites(lam) if n_sites is None else n_sites
    times = lattice_times(lam, delta, center, n)
    lo, hi = profile.span
    if profile.evaluator is None and (times[0] < lo - 1e-12 or times[-1] > hi + 1e-12):
        raise ValueError(f"profile span [{lo:.3g}, {hi:.3g}] does not cover the lattice times "
                         f"[{times[0]:.3g}, {times[-1]:.3g}]")
    spins = profile.evaluate(times)
    if np.min(bond_cosines(spins)) <= 0.0:
        raise ValueError("consecutive samples differ by pi/2 or more; refine lambda/sqrt(delta)")
    chain = SpinChain(spins, lam, FREE)
    if abs(chain.periodic_defect()) <= PERIODIC_TOL:
        chain.boundary = PERIODIC
    return chain


def sample_field(profile: ContinuumProfile, lam: float, delta: float, n_rows: int,
                 center: float = 0.5, n_sites: Optional[int] = None):
    from .geometry import SpinField2D

    return SpinField2D.extend_rows(sample_to_lattice(profile, lam, delta, center, n_sites), n_rows)


# --- oscillating (non-compact) sequence -------------------------------------------------


def oscillation_ramp(x: np.ndarray, eta: float, width: float) -> np.ndarray:
    """Staircase of unit steps centred at x = 1/2 + k eta, each spread over width * eta.

    Rotating the plane by pi times this ramp flips the chirality at every step, and
    consecutive flips pass through opposite intermediate axes.
    """
    wd = width * eta
    k_lo = math.floor((x.min() - 0.5) / eta) - 1
    k_hi = math.ceil((x.max() - 0.5) / eta) + 1
    g = np.zeros_like(x, dtype=float)
    for k in range(k_lo, k_hi + 1):
        step = smoothstep5((x - (0.5 + k * eta)) / wd + 0.5)
        g += step - 1.0 if k < 0 else step
    return g


def oscillating_chain(eta: float, params: ModelParams, z1=E3, width: float = 0.8,
                      n_sites: Optional[int] = None) -> SpinChain:
    """Chain whose chirality alternates between z1 and -z1 on x-intervals of length eta.

    Each switch is a zero-cost rotating-axis transition (half-turn of the rotation plane)
    spread over a fraction ``width`` of the half-period.  The z1 component is odd about
    x = 1/2 and the intermediate axes alternate, so the mean chirality is O(eta).
    Energies scale like beta / eta^2; use beta of order eta^3 to see the O(eta) bound.
    """
    if not 0 < eta <= 0.5:
        raise ValueError("eta must lie in (0, 1/2]")
    if not 0 < width <= 1:
        raise ValueError("width must lie in (0, 1]")
    lam, delta = params.lam, params.delta
    n = default_sites(lam) if n_sites is None else n_sites
    x = lam * np.arange(n)
    t = lattice_times(lam, delta, 0.5, n)
    g = oscillation_ramp(x, eta, width)
    frame = frame_with_axis(z1)
    spins = apply_frame(frame, rotate_about(E1, g * math.pi, planar(t)))
    chain = SpinChain(spins, lam, FREE)
    if abs(chain.periodic_defect()) <= PERIODIC_TOL:
        chain.boundary = PERIODIC
    return chain


# --- serialization -----------------------------------------------------------------------


def dumps_profile(profile: ContinuumProfile) -> str:
    return format_rows(np.column_stack([profile.t, profile.u, profile.w]))


def loads_profile(text: str, source: str = "<text>") -> ContinuumProfile:
    _, rows = parse_rows(text, 7, source)
    return ContinuumProfile(rows[:, 0], rows[:, 1:4], rows[:, 4:7])


def save_profile(path: str | Path, profile: ContinuumProfile) -> None:
    Path(path).write_text(dumps_profile(profile))


def load_profile(path: str | Path) -> ContinuumProfile:
    return loads_profile(Path(path).read_text(), str(path))
