"""Command-line entry point.

Subcommands: train | calibrate | run | verify | spikes | hist |
export-report.  Exit codes: 0 success, 1 check failure, 2 usage error.
Every run logs its fully resolved configuration as a JSON line on
stderr, so any output row is reproducible from (weights dir, dataset,
config) alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics, model_io, suites
from .calibrate import ThresholdPlan, ConvertedModel, convert
from .engine import NeuronMode, snn_forward
from .graph import accuracy, fold_batchnorm, train_toy_mlp
from .model_io import (DatasetHandle, load_digits_dataset, load_idx,
                       read_weights, synth_dataset, write_csv, write_weights)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def default_seed() -> int:
    return int(os.environ.get("SPIKEFORGE_SEED", "0"))


def parse_dataset(spec: str) -> DatasetHandle:
    """Dataset specifier grammar:

    xor[:n]                  the four XOR corners, cycled to n samples
    blobs[:n[:seed[:k]]]     seeded Gaussian blobs, k classes
    digits[:train|test]      bundled 8x8 handwritten digits
    idx:IMAGES,LABELS        IDX3/IDX1 file pair
    """
    head, _, rest = spec.partition(":")
    if head == "xor":
        n = int(rest) if rest else 4
        return synth_dataset("xor", n)
    if head == "blobs":
        parts = rest.split(":") if rest else []
        n = int(parts[0]) if len(parts) > 0 and parts[0] else 200
        seed = int(parts[1]) if len(parts) > 1 else 0
        classes = int(parts[2]) if len(parts) > 2 else 2
        return synth_dataset("gaussian-blobs", n, seed=seed, classes=classes,
                             dim=max(2, classes))
    if head == "digits":
        split = rest or "train"
        if split not in ("train", "test"):
            raise UsageError(f"digits split must be train or test, got {split!r}")
        return load_digits_dataset(split)
    if head == "idx":
        try:
            images, labels = rest.split(",")
        except ValueError:
            raise UsageError("idx spec must be idx:IMAGES_PATH,LABELS_PATH") from None
        return load_idx(images, labels)
    raise UsageError(f"unknown dataset spec {spec!r}")


def _int_list(s: str) -> list:
    try:
        return [int(v) for v in s.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {s!r}")


def _load_converted(weights_dir: str) -> ConvertedModel:
    model, manifest = read_weights(weights_dir)
    plan_json = manifest.get("threshold_plan")
    if plan_json is None:
        raise UsageError(
            f"{weights_dir} has no threshold plan; run `calibrate` first")
    return ConvertedModel(model, ThresholdPlan.from_json(plan_json),
                          bool(manifest.get("absorbed", True)))


def _log_config(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(json.dumps({"resolved_config": cfg}, sort_keys=True, default=str),
          file=sys.stderr)


# --- subcommands --------------------------------------------------------------

def cmd_train(args) -> int:
    data = parse_dataset(args.data)
    model = train_toy_mlp(data, args.arch, epochs=args.epochs, lr=args.lr,
                          seed=args.seed, batch_size=args.batch_size)
    feats = data.features.reshape(len(data), -1)
    acc = accuracy(model, feats, data.labels)
    write_weights(model, args.out, extra={"train_accuracy": acc})
    print(f"trained MLP {args.arch} on {data.name}: accuracy {acc:.4f} -> {args.out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    model, _ = read_weights(args.weights)
    data = parse_dataset(args.data)
    converted = convert(model, data, n_samples=args.samples, source=args.source,
                        granularity=args.granularity,
                        absorbed=not args.reference_mode)
    write_weights(converted.graph, args.out, extra={
        "threshold_plan": converted.plan.to_json(),
        "absorbed": converted.absorbed,
    })
    print(f"calibrated {len(converted.plan.thetas)} sites "
          f"({args.source}, {args.granularity}) -> {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    converted = _load_converted(args.weights)
    data = parse_dataset(args.data)
    config = metrics.SweepConfig(modes=args.mode, T_values=args.T,
                                 seeds=args.seeds, batch_size=args.batch_size,
                                 threads=args.threads,
                                 shuffle_scope=args.shuffle_scope)
    rows, summary = metrics.sweep_accuracy(config, converted, data)
    out_rows = [(m, T, s, f"{acc:.6f}",
                 f"{summary[(m, T)][0]:.6f}", f"{summary[(m, T)][1]:.6f}")
                for (m, T, s, acc) in rows]
    if args.out:
        write_csv(args.out, ("mode", "T", "seed", "accuracy", "mean", "std"), out_rows)
        print(f"wrote {len(out_rows)} rows -> {args.out}")
    else:
        for row in out_rows:
            print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_verify(args) -> int:
    payload = suites.run_suite(args.suite, seed=args.seed, trials=args.trials,
                               threads=args.threads)
    if args.json:
        model_io.write_json_report(args.json, payload)
    for check in payload["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']}")
    print(f"suite {args.suite}: {payload['num_checks'] - payload['num_failed']}"
          f"/{payload['num_checks']} checks passed")
    return EXIT_OK if payload["passed"] else EXIT_CHECK_FAILED


def cmd_spikes(args) -> int:
    converted = _load_converted(args.weights)
    data = parse_dataset(args.data)
    feats = data.features[: args.samples]
    idx = np.arange(len(feats))

    def trace_for(mode_name):
        _, trace = snn_forward(converted, feats, args.T, NeuronMode(mode_name),
                               run_seed=args.seed, sample_indices=idx,
                               record="counts")
        return trace

    baseline = metrics.count_spikes(trace_for("baseline"), "baseline", args.T)
    reports = [baseline]
    for m in args.mode:
        if m != "baseline":
            reports.append(metrics.count_spikes(trace_for(m), m, args.T,
                                                reference=baseline))
    rows = []
    for rep in reports:
        rows.extend(rep.rows())
    write_csv(args.out, ("mode", "T", "layer", "t", "mean_spikes"), rows)
    for rep in reports[1:]:
        pct = ", ".join(f"layer {i}: {d:+.2f}%"
                        for i, d in enumerate(rep.pct_diff_vs_reference))
        print(f"{rep.mode} vs baseline firing-count difference: {pct}")
    print(f"wrote {len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_hist(args) -> int:
    converted = _load_converted(args.weights)
    data = parse_dataset(args.data)
    feats = data.features[: args.samples]
    _, trace = snn_forward(converted, feats, args.T, NeuronMode(args.mode),
                           run_seed=args.seed, record="full")
    rows, meta = metrics.histogram_membrane(trace, args.layer, args.t, args.bins)
    write_csv(args.out, ("bin_left", "bin_right", "count"), rows)
    print(json.dumps(meta, sort_keys=True))
    print(f"wrote {len(rows)} bins -> {args.out}")
    return EXIT_OK


def cmd_export_report(args) -> int:
    payload = {"artifacts": {}}
    for path in args.csv:
        p = Path(path)
        lines = p.read_text().splitlines()
        payload["artifacts"][p.name] = {
            "kind": "csv",
            "header": lines[0].split(",") if lines else [],
            "rows": [line.split(",") for line in lines[1:]],
        }
    for kv in args.meta:
        key, _, val = kv.partition("=")
        if not key or not val:
            raise UsageError(f"--meta expects key=value, got {kv!r}")
        payload.setdefault("meta", {})[key] = val
    model_io.write_json_report(args.out, payload)
    print(f"bundled {len(args.csv)} artifact(s) -> {args.out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spikeforge",
        description="ANN-to-SNN conversion, simulation, and verification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a toy MLP and save its weights")
    t.add_argument("--data", required=True, help="dataset spec (see README)")
    t.add_argument("--arch", type=_int_list, default=[64, 64],
                   help="comma-separated hidden layer sizes")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=default_seed())
    t.add_argument("--out", required=True, help="output weights directory")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="fit thresholds and absorb them")
    c.add_argument("--weights", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--samples", type=int, default=512)
    c.add_argument("--source", default="max", help="max or pct:P")
    c.add_argument("--granularity", choices=("layer", "channel"), default="layer")
    c.add_argument("--reference-mode", action="store_true",
                   help="keep weights unscaled; simulator scales spikes by theta")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("run", help="accuracy sweep over modes, T and seeds")
    r.add_argument("--weights", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--mode", type=lambda s: s.split(","),
                   default=["baseline"], help="comma-separated subset of "
                   "baseline,shuffle,tpp")
    r.add_argument("--T", type=_int_list, required=True)
    r.add_argument("--seeds", type=_int_list, default=None)
    r.add_argument("--seed", type=int, default=default_seed(),
                   help="single seed shorthand when --seeds is omitted")
    r.add_argument("--shuffle-scope", choices=("shared", "per-neuron"),
                   default="shared")
    r.add_argument("--batch-size", type=int, default=256)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", help="CSV path (stdout when omitted)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run a theory-check suite")
    v.add_argument("--suite", choices=suites.SUITES, default="all")
    v.add_argument("--seed", type=int, default=default_seed())
    v.add_argument("--trials", type=int, default=10**5)
    v.add_argument("--threads", type=int, default=1)
    v.add_argument("--json", help="write the canonical JSON report here")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("spikes", help="per-layer spike counts vs baseline")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", type=lambda x: x.split(","),
                   default=["baseline", "shuffle", "tpp"])
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--seed", type=int, default=default_seed())
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spikes)

    h = sub.add_parser("hist", help="membrane potential histogram")
    h.add_argument("--weights", required=True)
    h.add_argument("--data", required=True)
    h.add_argument("--mode", choices=("baseline", "shuffle", "tpp"),
                   default="baseline")
    h.add_argument("--T", type=int, required=True)
    h.add_argument("--layer", type=int, default=0,
                   help="spiking-site index (0 = first activation)")
    h.add_argument("--t", type=int, default=1)
    h.add_argument("--bins", type=int, default=30)
    h.add_argument("--samples", type=int, default=64)
    h.add_argument("--seed", type=int, default=default_seed())
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_hist)

    e = sub.add_parser("export-report", help="bundle CSV artifacts into one JSON report")
    e.add_argument("--csv", action="append", default=[], required=True)
    e.add_argument("--meta", action="append", default=[],
                   help="key=value pairs merged into the report")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    if getattr(args, "seeds", "x") is None:
        args.seeds = [args.seed]
    _log_config(args)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
