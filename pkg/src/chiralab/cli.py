"""Command-line runner.

Every subcommand except ``accept`` reads a TOML config.  Exit codes: 0 on success,
2 when any minimization or solve stops without meeting its gradient tolerance,
1 on config or input errors (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .acceptance import run_acceptance
from .continuum import FREE_S2, ProfileProblem, SolveOptions, h_G_table, solve_profile
from .energies import ModelParams, chain_breakdown, eval_Hsl, eval_penalty
from .geometry import SpinChain, dumps_chain, frame_with_axis, load_chain, unit
from .minimize import (AnnealSchedule, Free, HardMk, MinimizeOptions, SoftG, chirality_pins, minimize_chain)
from .penalty import PenaltySpec
from .profiles import (dumps_profile, ground_helix, sample_to_lattice, soft_profile, tanh_profile,
                       zero_cost_profile)
from .sweep import ConfigError, format_csv, load_config, run_sweep, tomllib, write_atomic

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


# --- config helpers ------------------------------------------------------------------------------


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def _section(data: dict, name: str, required: bool = True) -> dict:
    if name not in data:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    sec = data[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _vec(sec: dict, key: str, where: str) -> np.ndarray:
    try:
        v = np.asarray(sec[key], dtype=float)
    except KeyError:
        raise ConfigError(f"[{where}] needs {key}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"[{where}] {key} must be a numeric 3-vector") from None
    if v.shape != (3,) or not np.all(np.isfinite(v)) or not np.linalg.norm(v) > 0:
        raise ConfigError(f"[{where}] {key} must be a nonzero 3-vector")
    return unit(v)


def model_params(data: dict) -> ModelParams:
    sec = _section(data, "model")
    try:
        return ModelParams(lam=float(sec["lambda"]), delta=float(sec["delta"]), j2=float(sec.get("j2", 0.0)),
                           mu=float(sec.get("mu", 0.0)),
                           j0=float(sec["j0"]) if "j0" in sec else None)
    except KeyError as e:
        raise ConfigError(f"[model] needs {e.args[0]}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[model] {e}") from None


def penalty(data: dict) -> Optional[PenaltySpec]:
    sec = _section(data, "penalty", required=False)
    if not sec:
        return None
    try:
        return PenaltySpec(np.asarray(sec["axes"], dtype=float))
    except KeyError:
        raise ConfigError("[penalty] needs axes") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[penalty] {e}") from None


def build_chain(data: dict, params: ModelParams, base: Path) -> SpinChain:
    """Chain from a file or from one of the analytic constructions, sampled on the model lattice."""
    sec = _section(data, "chain")
    if "file" in sec:
        try:
            return load_chain(base / sec["file"])
        except OSError as e:
            raise ConfigError(f"[chain] file: {e.strerror}: {sec['file']}") from None
    kind = sec.get("kind")
    n_sites = int(sec.get("n_sites", math.floor(1.0 / params.lam + 1e-9) + 1))
    if kind == "helix":
        axis = _vec(sec, "axis", "chain") if "axis" in sec else np.array([0.0, 0.0, 1.0])
        return ground_helix(params.delta, frame_with_axis(axis), n_sites=n_sites, lam=params.lam)
    half = 0.5 * params.step_angle * n_sites + 4.0
    center = float(sec.get("center", 0.5))
    if kind == "tanh":
        prof = tanh_profile(_vec(sec, "q_minus", "chain"), _vec(sec, "q_plus", "chain"), t_span=2 * half, h=0.01)
    elif kind == "soft":
        prof = soft_profile(_vec(sec, "q_minus", "chain"), _vec(sec, "q_plus", "chain"),
                            float(sec.get("epsilon", 0.1)), t_span=2 * half, h=0.01)
    elif kind == "zero_cost":
        rho = float(sec.get("rho", 16.0))
        prof = zero_cost_profile(_vec(sec, "q_minus", "chain"), _vec(sec, "q_plus", "chain"), rho,
                                 t_lo=-half - rho, t_hi=half + rho, h=0.01)
    else:
        raise ConfigError(f"[chain] needs file or kind in helix, tanh, soft, zero_cost (got {kind!r})")
    return sample_to_lattice(prof, params.lam, params.delta, center, n_sites)


def _anneal(data: dict) -> Optional[AnnealSchedule]:
    sec = _section(data, "anneal", required=False)
    if not sec:
        return None
    try:
        return AnnealSchedule(**sec)
    except TypeError as e:
        raise ConfigError(f"[anneal] {e}") from None


def minimize_options(data: dict, chain: SpinChain, params: ModelParams, pen: Optional[PenaltySpec],
                     seed: Optional[int]) -> MinimizeOptions:
    sec = _section(data, "minimize", required=False)
    mode_name = sec.get("mode", "free")
    if mode_name != "free" and pen is None:
        raise ConfigError(f"mode {mode_name!r} needs a [penalty] section")
    modes = {"free": lambda: Free(), "soft": lambda: SoftG(pen), "hard": lambda: HardMk(pen)}
    if mode_name not in modes:
        raise ConfigError(f"[minimize] mode must be free, soft or hard (got {mode_name!r})")
    pin = chirality_pins(chain.spins, params.delta) if sec.get("pin", True) else None
    try:
        return MinimizeOptions(max_iters=int(sec.get("max_iters", 20000)), grad_tol=float(sec.get("grad_tol", 1e-5)),
                               mode=modes[mode_name](), pin=pin,
                               seed=int(seed if seed is not None else sec.get("seed", 0)),
                               anneal=_anneal(data), method=sec.get("method", "lbfgs"))
    except ValueError as e:
        raise ConfigError(f"[minimize] {e}") from None


def profile_problem(data: dict, pen: Optional[PenaltySpec]) -> ProfileProblem:
    sec = _section(data, "problem")
    try:
        return ProfileProblem(_vec(sec, "q_minus", "problem"), _vec(sec, "q_plus", "problem"), pen,
                              sec.get("constraint", FREE_S2),
                              float(sec.get("t_span", 20.0)), float(sec.get("h", 5e-3)),
                              float(sec.get("penalty_weight", 0.5)))
    except ValueError as e:
        raise ConfigError(f"[problem] {e}") from None


def solve_options(data: dict, seed: Optional[int]) -> SolveOptions:
    sec = _section(data, "solve", required=False)
    seeds = (seed,) if seed is not None else tuple(int(s) for s in sec.get("seeds", (1, 2, 3)))
    return SolveOptions(max_iters=int(sec.get("max_iters", 5000)), grad_tol=float(sec.get("grad_tol", 1e-8)),
                        seeds=seeds, noise=float(sec.get("noise", 0.05)))


# --- output ----------------------------------------------------------------------------------------


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- subcommands ---------------------------------------------------------------------------------


def cmd_energy(args) -> int:
    data = read_toml(args.config)
    params = model_params(data)
    pen = penalty(data)
    chain = build_chain(data, params, Path(args.config).parent)
    bd = chain_breakdown(chain, params, pen)
    out = {"n_sites": chain.n_sites, "Hsl": eval_Hsl(chain, params),
           "penalty": eval_penalty(chain, params, pen) if pen is not None else 0.0,
           "energy_scaled": bd.total, "well_term": bd.well_term, "gradient_term": bd.gradient_term,
           "penalty_term": bd.penalty_term, "gamma_estimate": bd.gamma_estimate,
           "p": params.p, "beta": params.beta, "alpha": params.alpha}
    _emit(_json(out), args.out)
    return EXIT_OK


def cmd_minimize(args) -> int:
    data = read_toml(args.config)
    params = model_params(data)
    pen = penalty(data)
    chain = build_chain(data, params, Path(args.config).parent)
    opts = minimize_options(data, chain, params, pen, args.seed)
    try:
        result, rep = minimize_chain(chain, params, opts)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    summary = dict(rep.row(), step_failure=rep.step_failure, **rep.extra)
    if args.out:
        write_atomic(args.out, dumps_chain(result))
    sys.stdout.write(_json(summary))
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_profile(args) -> int:
    data = read_toml(args.config)
    prob = profile_problem(data, penalty(data))
    prof, info = solve_profile(prob, solve_options(data, args.seed))
    summary = {"energy": info.energy, "certificate": info.certificate, "converged": info.converged,
               "grad_norm": info.grad_norm, "iterations": info.iterations, "start": info.start,
               "starts": info.starts}
    if args.out:
        write_atomic(args.out, dumps_profile(prof))
    sys.stdout.write(_json(summary))
    return EXIT_OK if info.converged else EXIT_NOT_CONVERGED


def cmd_hgtable(args) -> int:
    data = read_toml(args.config)
    pen = penalty(data)
    if pen is None:
        raise ConfigError("hgtable needs a [penalty] section")
    sec = _section(data, "problem", required=False)
    kw = dict(t_span=float(sec.get("t_span", 20.0)), h=float(sec.get("h", 5e-3)),
              opts=solve_options(data, args.seed), asymmetry_tol=float(sec.get("asymmetry_tol", 0.02)),
              penalty_weight=float(sec.get("penalty_weight", 0.5)))
    if args.threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            table = h_G_table(pen, pool=pool, **kw)
    else:
        table = h_G_table(pen, **kw)
    _emit(table.to_csv(), args.out)
    for i, j, gap in table.asymmetric_pairs():
        print(f"asymmetric: h_G[{i},{j}] vs h_G[{j},{i}] differ by {gap:.3%}", file=sys.stderr)
    return EXIT_OK if bool(np.all(table.converged)) else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    out = args.out or cfg.output_path
    if out:
        # fail before any run if the destination cannot be written
        parent = Path(out).parent
        if not parent.is_dir():
            raise ConfigError(f"output directory {parent} does not exist")
    rows, all_converged = run_sweep(cfg, threads=args.threads)
    _emit(format_csv(rows), out)
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def cmd_accept(args) -> int:
    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise ConfigError(f"--only takes comma-separated criterion numbers (got {args.only!r})") from None
    try:
        results = run_acceptance(only)
    except KeyError as e:
        raise ConfigError(e.args[0]) from None
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_ERROR


def cmd_emit(args) -> int:
    data = read_toml(args.config)
    sec = _section(data, "emit")
    what = sec.get("what")
    if what == "chain":
        params = model_params(data)
        _emit(dumps_chain(build_chain(data, params, Path(args.config).parent)), args.out)
        return EXIT_OK
    if what != "profile":
        raise ConfigError(f"[emit] what must be profile or chain (got {what!r})")
    kind = sec.get("kind")
    h = float(sec.get("h", 1e-3))
    if kind == "tanh":
        prof = tanh_profile(_vec(sec, "q_minus", "emit"), _vec(sec, "q_plus", "emit"),
                            t_span=float(sec.get("t_span", 12.0)), h=h)
    elif kind == "soft":
        prof = soft_profile(_vec(sec, "q_minus", "emit"), _vec(sec, "q_plus", "emit"),
                            float(sec.get("epsilon", 0.1)), t_span=float(sec.get("t_span", 12.0)), h=h)
    elif kind == "zero_cost":
        prof = zero_cost_profile(_vec(sec, "q_minus", "emit"), _vec(sec, "q_plus", "emit"),
                                 float(sec.get("rho", 16.0)), h=h)
    else:
        raise ConfigError(f"[emit] kind must be tanh, soft or zero_cost (got {kind!r})")
    _emit(dumps_profile(prof), args.out)
    return EXIT_OK


COMMANDS = {"energy": cmd_energy, "minimize": cmd_minimize, "profile": cmd_profile, "hgtable": cmd_hgtable,
            "sweep": cmd_sweep, "accept": cmd_accept, "emit": cmd_emit}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chiralab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "accept":
            p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps and h_G tables")
        p.add_argument("--seed", type=int, help="override the config's seed(s)")
        if name == "accept":
            p.add_argument("--only", help="comma-separated criterion numbers")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
