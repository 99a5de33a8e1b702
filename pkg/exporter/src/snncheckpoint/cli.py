"""CLI: export a torch checkpoint into the portable weight directory."""

from __future__ import annotations

import argparse
import sys

import torch

from .export import ExportError, build_arch, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="snncheckpoint",
        description="export torch checkpoints to manifest.json + weights.bin")
    sub = parser.add_subparsers(dest="command", required=True)
    e = sub.add_parser("export")
    e.add_argument("--ckpt", required=True, help="torch state_dict file")
    e.add_argument("--arch", choices=("mlp", "vgg-small"), required=True)
    e.add_argument("--out", required=True, help="output weights directory")
    e.add_argument("--skip-unsupported", action="store_true",
                   help="drop parameter-free unsupported layers with a warning")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    module, input_shape = build_arch(args.arch)
    try:
        state = torch.load(args.ckpt, map_location="cpu", weights_only=True)
        module.load_state_dict(state)
        module.eval()
        table = export(module, input_shape, args.out, source=args.ckpt,
                       policy="warn-skip" if args.skip_unsupported else "error")
    except (ExportError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, kind, shapes in table:
        desc = ", ".join(f"{k}{list(v)}" for k, v in shapes.items()) or "-"
        print(f"{name:<12} {kind:<10} {desc}")
    print(f"exported {len(table)} layers -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
