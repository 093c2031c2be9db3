"""First-order descent on products of spheres (plus optional Euclidean coordinates).

Both methods take Armijo-backtracked steps along a tangent direction and map
back with a retraction, so every accepted iterate lies on the constraint set
and strictly lowers the objective.  ``lbfgs`` builds the direction from a
limited-memory two-loop recursion; ``pgd`` uses the negative gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

# The objective may return its value as an array of additive terms; the line
# search then compares termwise differences, which stay accurate long after the
# totals agree to rounding.
ObjGrad = Callable[[np.ndarray], tuple[Union[float, np.ndarray], np.ndarray]]
Proj = Callable[[np.ndarray, np.ndarray], np.ndarray]
Retr = Callable[[np.ndarray, np.ndarray], np.ndarray]

ARMIJO_C = 1e-4
BACKTRACK = 0.5
ROUNDING_SLACK = 1e-14


@dataclass
class OptResult:
    x: np.ndarray
    f: float
    iterations: int
    converged: bool
    grad_norm: float
    step_failure: bool = False
    evaluations: int = 0


def sphere_rows(n_rows: int, free: Optional[np.ndarray] = None):
    """Projection and renormalization retraction for a flat array of ``n_rows`` unit 3-vectors.

    ``free`` is a boolean row mask; fixed rows get zero gradient and never move.
    """
    mask = np.ones(n_rows, dtype=bool) if free is None else np.asarray(free, dtype=bool)

    def proj(x, g):
        u = x.reshape(-1, 3)
        gg = g.reshape(-1, 3)
        t = gg - np.sum(gg * u, axis=1, keepdims=True) * u
        t[~mask] = 0.0
        return t.ravel()

    def retr(x, v):
        y = (x + v).reshape(-1, 3)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        # renormalizing would perturb fixed rows by an ulp
        y[~mask] = x.reshape(-1, 3)[~mask]
        return y.ravel()

    return proj, retr


def euclidean(free: Optional[np.ndarray] = None):
    def proj(x, g):
        if free is None:
            return g
        out = g.copy()
        out[~free] = 0.0
        return out

    def retr(x, v):
        return x + v

    return proj, retr


def descend(fg: ObjGrad, x0: np.ndarray, proj: Proj, retr: Retr, *, method: str = "lbfgs",
            max_iters: int = 10000, grad_tol: float = 1e-8, step_init: float = 1.0,
            memory: int = 12, stall_iters: int = 200, on_step: Optional[Callable] = None,
            precond: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> OptResult:
    """Minimize ``fg`` from ``x0``; returns the last accepted iterate.

    ``precond(x, g)`` optionally applies an approximate inverse Hessian to a
    tangent vector; it becomes the L-BFGS initial matrix and the first
    search direction.

    Stops on sup-norm of the projected gradient <= grad_tol, on max_iters, or when
    the objective has not dropped by more than a few ulps for ``stall_iters`` steps.
    """
    x = np.array(x0, dtype=float)
    fterms, eg = fg(x)
    f = _total(fterms)
    g = proj(x, eg)
    nev = 1
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    last_step = 0.0
    stall = 0
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    it = 0
    failure = False
    while it < max_iters and gnorm > grad_tol:
        if method == "lbfgs" and s_hist:
            d = _two_loop(g, s_hist, y_hist, rho_hist, None if precond is None else lambda v: precond(x, v))
            d = proj(x, d)
            if g @ d >= 0:
                s_hist.clear(), y_hist.clear(), rho_hist.clear()
                d = -g
            t = 1.0
        elif method == "pgd" and it > 0:
            d = -g
            t = last_step
        else:
            d = -g if precond is None else -proj(x, precond(x, g))
            t = step_init / max(float(np.max(np.abs(d))), 1e-300)
        slope = float(g @ d)
        t0 = t
        accepted = False
        for _ in range(60):
            xn = retr(x, t * d)
            fterms_n, egn = fg(xn)
            nev += 1
            drop = _drop(fterms, fterms_n)
            if drop >= -ARMIJO_C * t * slope and drop > 0:
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            # energy differences can sit below rounding while the gradient is still
            # accurate; accept a step that shrinks the directional derivative and
            # does not raise the energy beyond rounding slack
            t = t0
            for _ in range(30):
                xn = retr(x, t * d)
                fterms_n, egn = fg(xn)
                nev += 1
                drop = _drop(fterms, fterms_n)
                if drop >= -ROUNDING_SLACK * max(abs(f), 1.0) and abs(float(proj(xn, egn) @ d)) <= 0.5 * abs(slope):
                    accepted = True
                    break
                t *= BACKTRACK
        if not accepted:
            if s_hist:
                s_hist.clear(), y_hist.clear(), rho_hist.clear()
                continue
            failure = True
            break
        gn = proj(xn, egn)
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if method == "lbfgs" and sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        if method == "pgd":
            last_step = 2.0 * t
        stall = stall + 1 if drop <= 1e-17 * max(abs(f), 1e-300) else 0
        x, fterms, g = xn, fterms_n, gn
        f = _total(fterms)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        it += 1
        if on_step is not None:
            on_step(it, x, f)
        if stall >= stall_iters:
            break
    return OptResult(x, float(f), it, gnorm <= grad_tol, gnorm, failure, nev)


def _total(terms) -> float:
    return float(np.sum(terms)) if isinstance(terms, np.ndarray) else float(terms)


def _drop(old, new) -> float:
    if isinstance(old, np.ndarray):
        return float(np.sum(old - new))
    return float(old - new)


def _two_loop(g, s_hist, y_hist, rho_hist, h0=None):
    q = g.copy()
    alphas = []
    for s, y, r in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = r * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    if h0 is None:
        q *= (s @ y) / (y @ y)
    else:
        hy = h0(y)
        q = h0(q) * ((s @ y) / (y @ hy))
    for (s, y, r), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = r * (y @ q)
        q += (a - b) * s
    return -q
