"""Axis sets Q_k, the circle union M_k and zero-homogeneous penalties G."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import frame_with_axis, normalize_rows, unit

DEADBAND = 1e-8
# directions this close to Q_k count as on L_k, where the subgradient 0 is used
KINK_TOL = 1e-9
MEMBERSHIP_TOL = 1e-9

DirFunc = Callable[[np.ndarray], np.ndarray]


@dataclass
class PenaltySpec:
    """Q_k = {±q_1..±q_k} plus a penalty G evaluated on directions.

    ``func`` (optional) maps unit directions ``(M, 3)`` to values ``(M,)``;
    ``func_grad`` returns the Euclidean gradient with respect to the direction.
    Without ``func`` the chordal distance to Q_k is used.
    ``weight`` multiplies G everywhere (used to compare G against 2G).
    """

    axes: np.ndarray
    func: Optional[DirFunc] = None
    func_grad: Optional[DirFunc] = None
    weight: float = 1.0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.axes, dtype=float))
        if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] < 1:
            raise ValueError("axes must be a (k, 3) array with k >= 1")
        a = normalize_rows(a)
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                d = min(np.linalg.norm(a[i] - a[j]), np.linalg.norm(a[i] + a[j]))
                if d < 1e-9:
                    raise ValueError(f"axes {i} and {j} define the same pair ±q")
        self.axes = a
        self.frames = np.array([frame_with_axis(q) for q in a])

    @property
    def k(self) -> int:
        return self.axes.shape[0]

    def scaled(self, factor: float) -> "PenaltySpec":
        return PenaltySpec(self.axes, self.func, self.func_grad, self.weight * factor)

    def signed_axes(self) -> np.ndarray:
        """The 2k points of Q_k, ordered q_1, -q_1, q_2, -q_2, ..."""
        return np.stack([s * q for q in self.axes for s in (1.0, -1.0)])

    # -- G and its gradient -------------------------------------------------

    def _nearest(self, n: np.ndarray):
        dots = n @ self.axes.T
        j = np.argmax(np.abs(dots), axis=-1)
        s = np.sign(np.take_along_axis(dots, j[..., None], axis=-1))[..., 0]
        s[s == 0] = 1.0
        return self.axes[j] * s[..., None]

    def G(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        r = np.linalg.norm(w, axis=-1)
        live = r >= DEADBAND
        out = np.zeros(r.shape)
        if np.any(live):
            n = w[live] / r[live][..., None]
            if self.func is None:
                out[live] = np.linalg.norm(n - self._nearest(n), axis=-1)
            else:
                out[live] = self.func(n)
        return self.weight * out

    def G_grad(self, w: np.ndarray) -> np.ndarray:
        """Gradient of G with respect to w (zero on L_k and inside the deadband)."""
        w = np.asarray(w, dtype=float)
        r = np.linalg.norm(w, axis=-1)
        out = np.zeros_like(w)
        live = r >= DEADBAND
        if not np.any(live):
            return out
        n = w[live] / r[live][..., None]
        if self.func is None:
            diff = n - self._nearest(n)
            g = np.linalg.norm(diff, axis=-1)
            dn = np.zeros_like(n)
            ok = g > KINK_TOL
            dn[ok] = diff[ok] / g[ok][..., None]
        else:
            if self.func_grad is None:
                raise ValueError("a custom G needs func_grad for gradient-based minimization")
            dn = self.func_grad(n)
        # d n / d w = (I - n n^T) / |w|
        dn = dn - np.sum(dn * n, axis=-1, keepdims=True) * n
        out[live] = dn / r[live][..., None]
        return self.weight * out

    # -- M_k helpers ------------------------------------------------------------

    def circle_distances(self, u: np.ndarray) -> np.ndarray:
        """Chordal distance of each spin to each great circle S^2 ∩ q_l^⊥, shape (N, k)."""
        u = np.atleast_2d(u)
        c = u @ self.axes.T
        s = np.sqrt(np.clip(1.0 - c * c, 0.0, 1.0))
        return np.sqrt(np.clip(2.0 - 2.0 * s, 0.0, None))

    def labels(self, u: np.ndarray) -> np.ndarray:
        return np.argmin(self.circle_distances(u), axis=1)

    def membership_distance(self, u: np.ndarray) -> np.ndarray:
        return np.min(self.circle_distances(u), axis=1)

    def check_membership(self, u: np.ndarray, tol: float = MEMBERSHIP_TOL) -> None:
        d = self.membership_distance(u)
        i = int(np.argmax(d))
        if d[i] > tol:
            raise ValueError(f"spin {i} is off M_k: chordal distance {d[i]:.3e} > {tol:.0e}")

    def intersections(self) -> np.ndarray:
        """All intersection points of pairs of distinct circles (both signs)."""
        pts = []
        for i in range(self.k):
            for j in range(i + 1, self.k):
                c = np.cross(self.axes[i], self.axes[j])
                p = unit(c)
                pts.extend([p, -p])
        return np.array(pts).reshape(-1, 3)

    def circle_angle(self, label: int, u: np.ndarray) -> np.ndarray:
        """Angle t with u = R_l (cos t, sin t, 0), where R_l e3 = q_l."""
        local = np.atleast_2d(u) @ self.frames[label]
        return np.arctan2(local[:, 1], local[:, 0])

    def circle_point(self, labels: np.ndarray, t: np.ndarray) -> np.ndarray:
        local = np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=-1)
        return np.einsum("nij,nj->ni", self.frames[labels], local)


def dist_to_Qk(axes) -> PenaltySpec:
    """Builtin G: chordal distance of z/|z| to Q_k, with G(0) = 0."""
    return PenaltySpec(np.asarray(axes, dtype=float))


def example_axes(alpha: float) -> np.ndarray:
    """q_1 = e_1, q_2 = (cos a, sin a, 0)."""
    return np.array([[1.0, 0.0, 0.0], [np.cos(alpha), np.sin(alpha), 0.0]])
