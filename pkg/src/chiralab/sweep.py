"""Configuration-driven regime sweeps.

A sweep runs one chain (or grid) per sequence index n, with

    delta_n = d0 * r**n,   lam_n = c * delta_n**s,   mu_n = m0 * delta_n**t,

so that p_n = mu_n / (sqrt(2) lam_n delta_n^{3/2}) and beta_n = lam_n / sqrt(delta_n)
follow powers of delta_n chosen by the exponents.
"""

from __future__ import annotations

import csv
import io
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .energies import ModelParams, chain_breakdown
from .geometry import SpinChain, SpinField2D, frame_with_axis, unit
from .minimize import (AnnealSchedule, Free, HardMk, MinimizeOptions, MinimizeReport, SoftG, chirality_pins,
                       minimize_2d, minimize_chain)
from .penalty import PenaltySpec
from .profiles import (ground_helix, sample_field, sample_to_lattice, soft_profile, tanh_profile,
                       zero_cost_profile)

REGIMES = ("R_i", "R_ii", "R_iii", "R_iv", "HardK", "FreeS2", "TwoD")
CSV_COLUMNS = ("run_id", "regime", "n", "lambda", "delta", "mu", "p_n", "beta_n", "energy", "energy_scaled",
               "well_term", "gradient_term", "penalty_term", "y_variation", "iterations", "converged",
               "grad_norm", "seed", "wall_ms")
LIMIT_RTOL = 0.05


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PowerRules:
    d0: float
    r: float
    c: float
    s: float
    m0: float = 0.0
    t: float = 0.0

    def params(self, n: int, j2: float = 0.0) -> ModelParams:
        delta = self.d0 * self.r**n
        return ModelParams(lam=self.c * delta**self.s, delta=delta, mu=self.m0 * delta**self.t, j2=j2)


@dataclass
class SweepConfig:
    regime: str
    n_values: list
    rules: PowerRules
    pen: Optional[PenaltySpec] = None
    pin_left: Optional[np.ndarray] = None
    pin_right: Optional[np.ndarray] = None
    seeds: list = field(default_factory=lambda: [0])
    output_path: Optional[str] = None
    init: str = "auto"
    rho: Optional[float] = None
    center: float = 0.5
    helix_axis: Optional[np.ndarray] = None
    max_iters: int = 20000
    grad_tol: float = 1e-5
    method: str = "lbfgs"
    anneal: Optional[AnnealSchedule] = None
    n_sites: Optional[int] = None
    n_rows: int = 16
    j2_factor: float = 10.0
    noise: float = 0.0


# --- parsing ---------------------------------------------------------------------------------


def _vec(x, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)) or np.linalg.norm(v) == 0:
        raise ConfigError(f"{what} must be a nonzero 3-vector")
    return unit(v)


def parse_config(data: dict) -> SweepConfig:
    """Build and validate a sweep config from a parsed TOML mapping."""
    try:
        regime = data["regime"]
        if regime not in REGIMES:
            raise ConfigError(f"unknown regime {regime!r}; expected one of {', '.join(REGIMES)}")
        n_values = [int(n) for n in data["n_values"]]
        r = data["rules"]
        rules = PowerRules(d0=float(r["d0"]), r=float(r["r"]), c=float(r["lambda_c"]), s=float(r["lambda_s"]),
                           m0=float(r.get("mu_m0", 0.0)), t=float(r.get("mu_t", 0.0)))
    except KeyError as e:
        raise ConfigError(f"missing key {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value in rules or n_values: {e}") from None
    pen = None
    if "penalty" in data:
        try:
            pen = PenaltySpec(np.asarray(data["penalty"]["axes"], dtype=float))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"penalty: {e}") from None
    pins = data.get("pins", {})
    init = data.get("init", {})
    mz = data.get("minimize", {})
    two = data.get("twod", {})
    anneal = None
    if "anneal" in data:
        try:
            anneal = AnnealSchedule(**data["anneal"])
        except TypeError as e:
            raise ConfigError(f"anneal: {e}") from None
    cfg = SweepConfig(
        regime=regime, n_values=n_values, rules=rules, pen=pen,
        pin_left=_vec(pins["left"], "pins.left") if "left" in pins else None,
        pin_right=_vec(pins["right"], "pins.right") if "right" in pins else None,
        seeds=[int(s) for s in data.get("seeds", [0])],
        output_path=data.get("output"),
        init=init.get("kind", "auto"), rho=init.get("rho"), center=float(init.get("center", 0.5)),
        helix_axis=_vec(init["axis"], "init.axis") if "axis" in init else None,
        max_iters=int(mz.get("max_iters", 20000)), grad_tol=float(mz.get("grad_tol", 1e-5)),
        method=mz.get("method", "lbfgs"), anneal=anneal,
        n_sites=init.get("n_sites"), n_rows=int(two.get("n_rows", 16)),
        j2_factor=float(two.get("j2_factor", 10.0)), noise=float(init.get("noise", 0.0)),
    )
    if not (cfg.rho is None or cfg.rho == "auto" or (isinstance(cfg.rho, (int, float)) and cfg.rho >= 1)):
        raise ConfigError("init.rho must be a number >= 1 or \"auto\"")
    validate(cfg)
    return cfg


def load_config(path) -> SweepConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(data)


# --- validation ---------------------------------------------------------------------------------


def sequence(cfg: SweepConfig) -> list[ModelParams]:
    return [cfg.rules.params(n) for n in cfg.n_values]


def regime_numbers(params: list[ModelParams]) -> tuple[np.ndarray, np.ndarray]:
    p = np.array([pr.p for pr in params])
    beta = np.array([pr.beta for pr in params])
    return p, beta


def validate(cfg: SweepConfig) -> None:
    """Reject configs whose rules do not describe the requested regime over the given n."""
    if not cfg.n_values:
        raise ConfigError("n_values is empty")
    if sorted(cfg.n_values) != cfg.n_values or len(set(cfg.n_values)) != len(cfg.n_values):
        raise ConfigError("n_values must be strictly increasing")
    if cfg.grad_tol <= 0 or cfg.max_iters < 1:
        raise ConfigError("grad_tol must be positive and max_iters at least 1")
    try:
        params = sequence(cfg)
    except ValueError as e:
        raise ConfigError(f"rules produce invalid parameters: {e}") from None
    deltas = np.array([pr.delta for pr in params])
    if len(deltas) > 1 and not np.all(np.diff(deltas) < 0):
        raise ConfigError("delta_n must decrease along n (need 0 < r < 1)")
    needs_pen = cfg.regime in ("R_i", "R_ii", "R_iii", "R_iv", "HardK")
    if needs_pen and cfg.pen is None:
        raise ConfigError(f"regime {cfg.regime} needs a [penalty] section")
    if cfg.regime in ("R_ii", "R_iii", "R_iv", "HardK", "FreeS2", "TwoD"):
        if cfg.pin_left is None or cfg.pin_right is None:
            raise ConfigError(f"regime {cfg.regime} needs pins.left and pins.right")
    if cfg.regime in ("R_i", "R_ii", "R_iii", "R_iv") and any(pr.mu <= 0 for pr in params):
        raise ConfigError("penalized regimes need mu_n > 0 (set rules.mu_m0)")
    if cfg.regime in ("R_i", "R_ii", "R_iii", "R_iv"):
        _check_regime(cfg.regime, *regime_numbers(params))


def _check_regime(regime: str, p: np.ndarray, beta: np.ndarray) -> None:
    pb = p * beta
    if len(p) < 2:
        raise ConfigError("regime trends need at least two n values")
    inc = lambda a: bool(np.all(np.diff(a) > 0))
    dec = lambda a: bool(np.all(np.diff(a) < 0))
    const = lambda a: float(np.max(a) - np.min(a)) <= LIMIT_RTOL * float(np.max(np.abs(a)))
    if regime == "R_i" and not const(p):
        raise ConfigError(f"R_i needs p_n to settle at a finite value; got p_n from {p[0]:.4g} to {p[-1]:.4g}")
    if regime == "R_ii" and not (inc(p) and dec(pb)):
        raise ConfigError("R_ii needs p_n increasing and p_n beta_n decreasing")
    if regime == "R_iii" and not (inc(p) and const(pb)):
        raise ConfigError("R_iii needs p_n increasing and p_n beta_n settling at a positive constant")
    if regime == "R_iv" and not (inc(p) and inc(pb)):
        raise ConfigError("R_iv needs p_n increasing and p_n beta_n increasing")


# --- runs ---------------------------------------------------------------------------------------


@dataclass
class RunResult:
    row: dict
    converged: bool


def transition_inits(cfg: SweepConfig, params: ModelParams, n_sites: int) -> list[tuple[str, SpinChain]]:
    """Lattice samples of the analytic transitions between the pinned axes."""
    ql, qr = cfg.pin_left, cfg.pin_right
    out = []
    half = 0.5 * math.acos(1.0 - params.delta) * n_sites + 4.0
    kinds = [cfg.init] if cfg.init != "auto" else {
        "HardK": ["tanh"], "R_iv": ["tanh"], "R_iii": ["tanh", "zero_cost"], "R_ii": ["soft", "zero_cost"],
        "FreeS2": ["zero_cost"], "TwoD": ["tanh"],
    }[cfg.regime]
    for kind in kinds:
        center = cfg.center
        if kind == "tanh":
            prof = tanh_profile(ql, qr, t_span=2 * half, h=0.01)
        elif kind == "soft":
            prof = soft_profile(ql, qr, 0.1, t_span=2 * half, h=0.01)
        elif kind == "zero_cost":
            span = math.acos(1.0 - params.delta) * (n_sites - 1)
            if cfg.rho is None:
                rho = span - 6.0
            elif cfg.rho == "auto":
                # rough balance of the C/rho bending cost against a penalty growing like p beta rho
                rho = min(span - 6.0, 5.0 / math.sqrt(params.p * params.beta)) if params.mu > 0 else span - 6.0
            else:
                rho = float(cfg.rho)
            rho = max(1.0, rho)
            prof = zero_cost_profile(ql, qr, rho, t_lo=-half - rho, t_hi=half + rho)
            center = float(np.clip((3.0 / math.acos(1.0 - params.delta)) * params.lam, 0.0, 1.0))
        else:
            raise ConfigError(f"unknown init kind {kind!r}")
        out.append((kind, sample_to_lattice(prof, params.lam, params.delta, center, n_sites)))
    return out


def _helix(cfg: SweepConfig, params: ModelParams, n_sites: int) -> SpinChain:
    axis = cfg.helix_axis if cfg.helix_axis is not None else cfg.pen.axes[0]
    return ground_helix(params.delta, frame_with_axis(axis), n_sites=n_sites, lam=params.lam)


def _mode(cfg: SweepConfig):
    if cfg.regime == "HardK":
        return HardMk(cfg.pen)
    if cfg.regime == "FreeS2" or cfg.pen is None:
        return Free()
    return SoftG(cfg.pen)


def run_one(cfg: SweepConfig, n: int, seed: int) -> RunResult:
    t0 = time.perf_counter()
    params = cfg.rules.params(n)
    n_sites = int(cfg.n_sites) if cfg.n_sites else int(math.floor(1.0 / params.lam + 1e-9)) + 1
    row = {"run_id": f"{cfg.regime}-n{n}-s{seed}", "regime": cfg.regime, "n": n, "lambda": params.lam,
           "delta": params.delta, "mu": params.mu, "p_n": params.p, "beta_n": params.beta, "seed": seed}
    if cfg.regime == "R_i":
        chain = _helix(cfg, params, n_sites)
        bd = chain_breakdown(chain, params, cfg.pen)
        rep = MinimizeReport(bd.total * params.scale, bd.total, 0, True, 0.0, bd)
    elif cfg.regime == "TwoD":
        rep = _run_2d(cfg, params, n_sites, seed)
    else:
        best = None
        for _, init in transition_inits(cfg, params, n_sites):
            if cfg.noise > 0:
                init = _perturb(init, cfg.noise, seed)
            opts = MinimizeOptions(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol, mode=_mode(cfg),
                                   pin=chirality_pins(init.spins, params.delta), seed=seed, anneal=cfg.anneal,
                                   method=cfg.method)
            _, rep = minimize_chain(init, params, opts)
            if best is None or rep.scaled_energy < best.scaled_energy:
                best = rep
        rep = best
    row.update(rep.row())
    row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
    return RunResult(row, rep.converged)


def _perturb(chain: SpinChain, amp: float, seed: int) -> SpinChain:
    rng = np.random.default_rng(seed)
    u = chain.spins.copy()
    u[2:-2] += amp * rng.normal(size=u[2:-2].shape)
    return chain.with_spins(u)


def _run_2d(cfg: SweepConfig, params: ModelParams, n_sites: int, seed: int) -> MinimizeReport:
    params = params.with_(j2=cfg.j2_factor * math.sqrt(params.delta) / params.lam)
    _, chain = transition_inits(cfg, params, n_sites)[0]
    spins = np.repeat(chain.spins[:, None, :], cfg.n_rows, axis=1)
    if cfg.noise > 0:
        rng = np.random.default_rng(seed)
        spins[2:-2] += cfg.noise * rng.normal(size=spins[2:-2].shape)
    field_ = SpinField2D(spins, params.lam)
    opts = MinimizeOptions(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol, seed=seed, method=cfg.method,
                           pin=chirality_pins(chain.spins, params.delta))
    _, rep = minimize_2d(field_, params, cfg.pen, opts)
    return rep


def _task(args):
    cfg, n, seed = args
    return run_one(cfg, n, seed)


def run_sweep(cfg: SweepConfig, threads: int = 1) -> tuple[list[dict], bool]:
    """All (n, seed) runs in deterministic order; returns rows and whether every run converged."""
    tasks = [(cfg, n, s) for n in cfg.n_values for s in cfg.seeds]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    return [r.row for r in results], all(r.converged for r in results)


def format_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for row in rows:
        wr.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory so readers never see partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
