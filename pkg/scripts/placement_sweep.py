"""Cost of each attention kind under both insertion points, for one preset."""

import argparse

from coordatt.attention import AttentionConfig
from coordatt.cost import cost_report
from coordatt.network import PRESETS, PLACEMENTS, build_network, preset, with_attention
from coordatt.tensor import Rng


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="mobilenetv2-1.0", choices=sorted(PRESETS))
    parser.add_argument("--reductions", type=int, nargs="+", default=[8, 16, 24, 32])
    args = parser.parse_args()
    base = preset(args.preset)
    print(f"{'kind':6s} {'r':>3s} {'placement':12s} {'params':>9s} {'madds':>9s}")
    for kind in ("none", "se", "cbam", "ca", "ca_x", "ca_y"):
        for r in args.reductions if kind != "none" else [0]:
            for placement in PLACEMENTS if kind != "none" else ["-"]:
                spec = base
                if kind != "none":
                    spec = with_attention(base, AttentionConfig(kind, reduction=r), placement)
                rep = cost_report(build_network(spec, Rng(0)))
                print(f"{kind:6s} {r:3d} {placement:12s} {rep.total_params / 1e6:8.3f}M "
                      f"{rep.total_madds / 1e6:8.2f}M")


if __name__ == "__main__":
    main()
