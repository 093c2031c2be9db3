"""Run every shipped sweep config and write one CSV per regime into an output directory."""

import argparse
import time
from pathlib import Path

from chiralab.sweep import format_csv, load_config, run_sweep, write_atomic

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SWEEPS = ("r_i", "r_ii", "r_iii", "r_iv", "hardk", "frees2", "twod")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("names", nargs="*", default=list(SWEEPS))
    args = ap.parse_args()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in args.names:
        cfg = load_config(CONFIG_DIR / f"{name}.toml")
        t0 = time.perf_counter()
        rows, ok = run_sweep(cfg, threads=args.threads)
        write_atomic(out_dir / f"{name}.csv", format_csv(rows))
        trend = ", ".join(f"{r['energy_scaled']:.4f}" for r in rows)
        print(f"{name}: {trend} ({time.perf_counter() - t0:.0f}s, all converged: {ok})")


if __name__ == "__main__":
    main()
