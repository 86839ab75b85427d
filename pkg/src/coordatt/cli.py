"""Command line entry point: ``coordatt <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost, gradcheck, toy
from .attention import ATTENTION_KINDS, AttentionConfig, CAParams, ca_gates
from .network import PRESETS, NetworkSpec, SpecError, build_network, preset, with_attention
from .pnm import PNMError, read_pnm, write_pgm
from .serialization import WeightFileError, load_spec, load_weights, save_weights
from .tensor import GraphError, Rng, ShapeError, Tensor


class CLIError(Exception):
    pass


def _parse_shape(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected CxHxW with positive integers, got {text!r}")
    return dims


def _spec_from_args(args) -> NetworkSpec:
    if getattr(args, "spec", None) and getattr(args, "preset", None):
        raise CLIError("give either --spec or --preset, not both")
    if getattr(args, "spec", None):
        spec = load_spec(args.spec)
    elif getattr(args, "preset", None):
        spec = preset(args.preset)
    else:
        raise CLIError("one of --spec or --preset is required")
    if getattr(args, "attention", None) is not None:
        spec = with_attention(spec, AttentionConfig(args.attention, reduction=args.reduction))
    return spec


def _load_net(args):
    spec = load_spec(args.spec)
    net = build_network(spec, Rng(0))
    load_weights(args.weights, net)
    return net.eval()


def _load_image(path, spec: NetworkSpec) -> Tensor:
    img = read_pnm(path)
    if img.shape[0] != spec.input_shape[0]:
        raise CLIError(f"{path}: image has {img.shape[0]} channels, network expects {spec.input_shape[0]}")
    return Tensor(img[None])


def _write_matrix(path: Path, m: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(m), fmt="%.9f")


# -- subcommands


def cmd_build(args) -> int:
    net = build_network(_spec_from_args(args), Rng(args.seed))
    save_weights(net, args.out)
    print(f"wrote {len(net.named_state())} tensors to {args.out}", file=sys.stderr)
    return 0


def cmd_cost(args) -> int:
    net = build_network(_spec_from_args(args), Rng(0))
    report = cost.cost_report(net, args.input)
    sys.stdout.write(cost.emit_report(report, args.format))
    return 0


def cmd_gradcheck(args) -> int:
    reports = gradcheck.run_checks(args.target, args.seed, args.cases, args.sabotage, args.jobs)
    passed = all(r.passed for r in reports)
    doc = {"target": args.target, "seed": args.seed, "sabotage": args.sabotage, "passed": passed,
           "checks": [r.to_dict() for r in reports]}
    print(json.dumps(doc, indent=2))
    return 0 if passed else 1


def cmd_verify(args) -> int:
    checks = gradcheck.run_checks("all", args.seed, args.cases, False, args.jobs)
    oracles = []
    for kind in ("se", "cbam", "ca", "ca_x", "ca_y"):
        diff = gradcheck.oracle_agreement(kind, args.seed, args.cases)
        oracles.append({"kind": kind, "max_abs_diff": diff, "threshold": 1e-10, "passed": diff <= 1e-10})
    budgets = cost.check_budgets()
    sections = {
        "gradcheck": [r.to_dict() for r in checks],
        "oracle_agreement": oracles,
        "budgets": budgets,
    }
    passed = all(r.passed for r in checks) and all(o["passed"] for o in oracles) \
        and all(b["passed"] for b in budgets)
    print(json.dumps({"passed": passed, **sections}, indent=2))
    for name, rows in sections.items():
        for row in rows:
            ok = row["passed"]
            label = row.get("name") or row.get("kind") or row.get("label")
            print(f"{'PASS' if ok else 'FAIL'} {name} {label}", file=sys.stderr)
    return 0 if passed else 1


def cmd_train_toy(args) -> int:
    cfg = toy.ToyConfig(attention=args.attention, steps=args.steps, seed=args.seed)
    _, rows = toy.train_toy(cfg)
    text = toy.metrics_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_infer(args) -> int:
    net = _load_net(args)
    x = _load_image(args.input, net.spec)
    probs = net.predict_proba(x)[0]
    doc = {"top_class": int(np.argmax(probs)), "probabilities": [float(p) for p in probs]}
    print(json.dumps(doc))
    return 0


def cmd_dump_attn(args) -> int:
    net = _load_net(args)
    layer = args.layer.removesuffix(".attn")
    try:
        index = int(layer.split(".")[1]) if layer.startswith("blocks.") else -1
    except ValueError:
        index = -1
    if not 0 <= index < len(net.blocks):
        raise CLIError(f"--layer: expected blocks.<i> with 0 <= i < {len(net.blocks)}, got {args.layer!r}")
    params, bspec = net.blocks[index].attn, net.spec.blocks[index]
    if not isinstance(params, CAParams):
        raise CLIError(f"--layer {args.layer}: block has {bspec.attention.kind!r} attention, "
                       "gate dumps need a coordinate attention block")
    x = _load_image(args.input, net.spec)
    taps: dict = {}
    net.features(x, taps)
    g_h, g_w = ca_gates(taps[f"blocks.{index}.attn"], params, bspec.attention)
    gh, gw = g_h.data[0, :, :, 0], g_w.data[0, :, 0, :]  # [C,H], [C,W]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"blocks.{index}"
    mean_h, mean_w = gh.mean(axis=0)[:, None], gw.mean(axis=0)[None, :]  # H x 1, 1 x W
    _write_matrix(out / f"{stem}.gh.txt", mean_h)
    _write_matrix(out / f"{stem}.gw.txt", mean_w)
    _write_matrix(out / f"{stem}.gh_channels.txt", gh)
    _write_matrix(out / f"{stem}.gw_channels.txt", gw)
    write_pgm(out / f"{stem}.gh.pgm", mean_h)
    write_pgm(out / f"{stem}.gw.pgm", mean_w)
    write_pgm(out / f"{stem}.map.pgm", (gh[:, :, None] * gw[:, None, :]).mean(axis=0))
    print(json.dumps({"layer": stem, "channels": gh.shape[0], "gh_shape": list(mean_h.shape),
                      "gw_shape": list(mean_w.shape), "out": str(out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coordatt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def spec_flags(p, with_preset=True):
        p.add_argument("--spec", help="network spec JSON file")
        if with_preset:
            p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--attention", choices=ATTENTION_KINDS, help="put this attention on every block")
        p.add_argument("--reduction", type=int, default=32)

    p = sub.add_parser("build", help="initialize a network and write its weights")
    spec_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("cost", help="per-layer parameter and multiply-add report")
    spec_flags(p)
    p.add_argument("--input", type=_parse_shape, default=None, metavar="CxHxW")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("gradcheck", help="central-difference gradient verification")
    p.add_argument("--target", default="all",
                   help=f"all, op, block, network, or one of: {', '.join(gradcheck.TARGETS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--sabotage", action="store_true", help="corrupt the analytic gradient (harness self-test)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("verify", help="gradcheck all + oracle agreement + published budgets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train-toy", help="train on the synthetic bar-position task")
    p.add_argument("--attention", choices=ATTENTION_KINDS, default="ca")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_toy)

    for name, func, help_text in (("infer", cmd_infer, "class probabilities for one image"),
                                  ("dump-attn", cmd_dump_attn, "write coordinate attention gates")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", required=True)
        p.add_argument("--weights", required=True)
        p.add_argument("--input", required=True, help="PGM (P5) or PPM (P6) image")
        if name == "dump-attn":
            p.add_argument("--layer", required=True, help="blocks.<i>")
            p.add_argument("--out", default=".", help="output directory")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "steps", 0) < 0:
        print("error: --steps must be >= 0", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CLIError, SpecError, WeightFileError, PNMError, ShapeError, GraphError, KeyError,
            ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
