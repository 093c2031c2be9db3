"""Spin configurations, the chirality map and SO(3) helpers.

Chains are stored as contiguous ``(N, 3)`` float arrays; site ``i`` sits at
lattice point ``spacing * i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

log = logging.getLogger(__name__)

UNIT_TOL = 1e-12
DRIFT_WARN = 1e-9
PERIODIC_TOL = 1e-10

FREE = "free"
PERIODIC = "periodic"

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class PinnedChirality:
    """Boundary chirality values z^0 and z^{N-2} held fixed by pinning two spins per end."""

    left: np.ndarray
    right: np.ndarray


Boundary = Union[str, PinnedChirality]


def normalize_rows(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return v / n


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero vector has no direction")
    return v / n


def _renormalize(spins: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(spins, axis=-1)
    if np.any(norms == 0.0):
        raise ValueError(f"{what}: zero spin vector")
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > DRIFT_WARN:
        log.debug("%s: unit-norm drift %.3e before renormalization", what, drift)
    # rows already unit to rounding are left untouched so text round trips stay bit-exact
    off = np.abs(norms - 1.0) > 1e-14
    if not np.any(off):
        return spins
    out = spins.copy()
    out[off] /= norms[off][:, None]
    return out


@dataclass
class SpinChain:
    spins: np.ndarray
    spacing: float
    boundary: Boundary = FREE

    def __post_init__(self):
        s = np.ascontiguousarray(self.spins, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3:
            raise ValueError(f"spins must have shape (N, 3), got {s.shape}")
        if s.shape[0] < 3:
            raise ValueError(f"a chain needs at least 3 sites, got {s.shape[0]}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if not (self.boundary in (FREE, PERIODIC) or isinstance(self.boundary, PinnedChirality)):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        self.spins = _renormalize(s, "SpinChain")
        self.spacing = float(self.spacing)

    @property
    def n_sites(self) -> int:
        return self.spins.shape[0]

    def with_spins(self, spins: np.ndarray) -> "SpinChain":
        return SpinChain(spins, self.spacing, self.boundary)

    def rotated(self, rot: np.ndarray) -> "SpinChain":
        return self.with_spins(self.spins @ np.asarray(rot).T)

    def periodic_defect(self) -> float:
        """(u^1,u^0) - (u^{N-1},u^{N-2})."""
        u = self.spins
        return float(u[1] @ u[0] - u[-1] @ u[-2])


@dataclass
class SpinField2D:
    """Grid of unit spins indexed ``spins[i1, i2]``; i1 runs along e1 (the chain direction)."""

    spins: np.ndarray
    spacing: float
    periodic_rows: bool = False

    def __post_init__(self):
        s = np.ascontiguousarray(self.spins, dtype=float)
        if s.ndim != 3 or s.shape[2] != 3:
            raise ValueError(f"spins must have shape (N1, N2, 3), got {s.shape}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        self.spins = _renormalize(s, "SpinField2D")
        self.spacing = float(self.spacing)

    @property
    def shape(self) -> tuple[int, int]:
        return self.spins.shape[0], self.spins.shape[1]

    def row(self, m: int) -> SpinChain:
        return SpinChain(self.spins[:, m], self.spacing, PERIODIC if self.periodic_rows else FREE)

    def row_defects(self) -> np.ndarray:
        u = self.spins
        return np.einsum("jk,jk->j", u[1], u[0]) - np.einsum("jk,jk->j", u[-1], u[-2])

    @classmethod
    def extend_rows(cls, chain: SpinChain, n_rows: int) -> "SpinField2D":
        """Copy a chain into every row (a field constant in e2)."""
        spins = np.repeat(chain.spins[:, None, :], n_rows, axis=1)
        return cls(spins, chain.spacing, chain.boundary == PERIODIC)


@dataclass
class ChiralityField:
    values: np.ndarray
    delta: float = field(default=0.0)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=-1)

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)


def bond_cross(spins: np.ndarray) -> np.ndarray:
    """w^i = u^i x u^{i+1} along the first axis."""
    return np.cross(spins[:-1], spins[1:])


def chirality(chain: SpinChain, delta: float) -> ChiralityField:
    if not delta > 0:
        raise ValueError("delta must be positive")
    return ChiralityField(bond_cross(chain.spins) / np.sqrt(2.0 * delta), float(delta))


def bond_cosines(spins: np.ndarray) -> np.ndarray:
    return np.clip(np.einsum("...k,...k->...", spins[:-1], spins[1:]), -1.0, 1.0)


def angles(chain: SpinChain) -> np.ndarray:
    """theta^i in [0, pi], the angle between consecutive spins."""
    return np.arccos(bond_cosines(chain.spins))


# --- SO(3) -----------------------------------------------------------------


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula for exp(angle * skew(axis))."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    k = skew(a / n)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def antipodal_axis(a: np.ndarray) -> np.ndarray:
    """Deterministic unit vector orthogonal to a: e1 projected off a, or e2 if a is close to e1."""
    ref = E2 if abs(a @ E1) > 0.9 else E1
    return unit(ref - (ref @ a) * a)


def rotation_between(a, b) -> np.ndarray:
    """Minimal-angle rotation R with R a = b."""
    a = unit(a)
    b = unit(b)
    c = float(np.clip(a @ b, -1.0, 1.0))
    cr = np.cross(a, b)
    s = np.linalg.norm(cr)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        return rotation_exp(antipodal_axis(a), np.pi)
    return rotation_exp(cr / s, np.arctan2(s, c))


def rotation_log(rot: np.ndarray) -> tuple[np.ndarray, float]:
    """Principal (axis, angle) with angle in [0, pi]; axis is e3 for the identity."""
    r = np.asarray(rot, dtype=float)
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(c))
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < 1e-12:
        return E3.copy(), 0.0
    if np.pi - angle > 1e-6:
        return unit(v), angle
    # near a half-turn: R + I = 2 n n^T
    m = (r + np.eye(3)) / 2.0
    j = int(np.argmax(np.diag(m)))
    n = unit(m[:, j])
    if v @ n < 0:
        n = -n
    return n, angle


def frame_with_axis(q) -> np.ndarray:
    """Rotation R with R e3 = q (the minimal one)."""
    return rotation_between(E3, q)


# --- algebraic identities ----------------------------------------------------


def order4_residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = np.sum((b - a) ** 2, axis=-1)
    ab = np.sum(a * b, axis=-1)
    return 4.0 * d2 - (d2**2 + 4.0 * (1.0 - ab**2))


def rodrigues_residual(u0: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    w0 = np.cross(u0, u1)
    w1 = np.cross(u1, u2)
    c0 = np.sum(u0 * u1, axis=-1)
    c1 = np.sum(u1 * u2, axis=-1)
    lhs = np.sum((u2 - u0) ** 2, axis=-1)
    return lhs - (np.sum((w1 + w0) ** 2, axis=-1) + (c1 - c0) ** 2)


def cross_identity_residual(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    lhs = np.sum(np.cross(a, b) * np.cross(b, c), axis=-1)
    rhs = np.sum(a * b, axis=-1) * np.sum(b * c, axis=-1) - np.sum(a * c, axis=-1)
    return lhs - rhs


# --- boundary helpers ---------------------------------------------------------


def enforce_periodic(spins: np.ndarray) -> np.ndarray:
    """Rotate the last spin towards/away from its neighbour so (u^{N-1},u^{N-2}) = (u^1,u^0)."""
    u = np.array(spins, dtype=float, copy=True)
    target = float(np.clip(u[1] @ u[0], -1.0, 1.0))
    a = u[-2]
    perp = u[-1] - (u[-1] @ a) * a
    n = np.linalg.norm(perp)
    e = perp / n if n > 1e-14 else antipodal_axis(a)
    u[-1] = target * a + np.sqrt(max(0.0, 1.0 - target * target)) * e
    return u


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    return normalize_rows(rng.normal(size=(n, 3)))


def random_tangent_step(rng: np.random.Generator, u: np.ndarray, max_angle: float) -> np.ndarray:
    """Rotate u by a uniform angle in [0, max_angle] about a random axis orthogonal to u."""
    v = rng.normal(size=3)
    v -= (v @ u) * u
    v = unit(v)
    ang = rng.uniform(0.0, max_angle)
    return np.cos(ang) * u + np.sin(ang) * v


def random_chain(rng: np.random.Generator, n_sites: int, spacing: float, max_angle: float,
                 periodic: bool = False) -> SpinChain:
    """Random walk on S^2 whose consecutive spins are at most ``max_angle`` apart."""
    spins = np.empty((n_sites, 3))
    spins[0] = random_unit_vectors(rng, 1)[0]
    for i in range(1, n_sites):
        spins[i] = random_tangent_step(rng, spins[i - 1], max_angle)
    if periodic:
        spins = enforce_periodic(spins)
    return SpinChain(spins, spacing, PERIODIC if periodic else FREE)


# --- serialization -------------------------------------------------------------


def _boundary_tag(b: Boundary) -> str:
    if isinstance(b, PinnedChirality):
        vals = ",".join(repr(float(x)) for x in (*b.left, *b.right))
        return f"pinned:{vals}"
    return b


def _parse_boundary(tag: str) -> Boundary:
    if tag in (FREE, PERIODIC):
        return tag
    if tag.startswith("pinned:"):
        vals = [float(x) for x in tag[len("pinned:"):].split(",")]
        if len(vals) != 6:
            raise ValueError("pinned boundary needs six components")
        return PinnedChirality(np.array(vals[:3]), np.array(vals[3:]))
    raise ValueError(f"unknown boundary tag {tag!r}")


def format_rows(rows: np.ndarray) -> str:
    return "".join(" ".join(f"{x:.17g}" for x in r) + "\n" for r in rows)


def parse_rows(text: str, ncols: int, source: str = "<text>") -> tuple[dict, np.ndarray]:
    """Parse whitespace-separated numeric rows; ``# key=value`` lines are metadata."""
    meta: dict[str, str] = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            for tok in s[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        parts = s.split()
        if len(parts) != ncols:
            raise ValueError(f"{source}:{lineno}: expected {ncols} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{source}: no data rows")
    return meta, np.array(rows)


def dumps_chain(chain: SpinChain) -> str:
    head = f"# spacing={chain.spacing!r} boundary={_boundary_tag(chain.boundary)}\n"
    return head + format_rows(chain.spins)


def loads_chain(text: str, source: str = "<text>") -> SpinChain:
    meta, rows = parse_rows(text, 3, source)
    spacing = float(meta.get("spacing", 1.0 / max(rows.shape[0] - 1, 1)))
    return SpinChain(rows, spacing, _parse_boundary(meta.get("boundary", FREE)))


def save_chain(path: str | Path, chain: SpinChain) -> None:
    Path(path).write_text(dumps_chain(chain))


def load_chain(path: str | Path) -> SpinChain:
    return loads_chain(Path(path).read_text(), str(path))
