"""Train the toy positional task once per attention kind and compare loss curves."""

import argparse
import time
from pathlib import Path

import numpy as np

from coordatt.attention import ATTENTION_KINDS
from coordatt.toy import ToyConfig, metrics_csv, train_toy


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--kinds", nargs="+", default=list(ATTENTION_KINDS), choices=ATTENTION_KINDS)
    parser.add_argument("--out-dir", type=Path, help="write one metrics CSV per run here")
    args = parser.parse_args()

    print(f"{'kind':6s} {'seed':>4s} {'initial':>8s} {'final10':>8s} {'ratio':>6s} {'acc10':>6s} {'secs':>6s}")
    for kind in args.kinds:
        for seed in args.seeds:
            t0 = time.perf_counter()
            _, rows = train_toy(ToyConfig(attention=kind, steps=args.steps, seed=seed))
            dt = time.perf_counter() - t0
            loss = np.array([r[1] for r in rows])
            acc = np.array([r[2] for r in rows])
            print(f"{kind:6s} {seed:4d} {loss[0]:8.4f} {loss[-10:].mean():8.4f} "
                  f"{loss[-10:].mean() / loss[0]:6.3f} {acc[-10:].mean():6.3f} {dt:6.1f}")
            if args.out_dir:
                args.out_dir.mkdir(parents=True, exist_ok=True)
                (args.out_dir / f"toy_{kind}_seed{seed}.csv").write_text(metrics_csv(rows))


if __name__ == "__main__":
    main()
