"""Command-line entry point: ``pqcomp <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .config import data_spec, load_datasets, load_toml, train_config_from_dict
from .data import emit_histogram, emit_report, train_val_split
from .metrics import Policy, builtin_arch, compression_report, load_arch, load_policy
from .models import build_model
from .pipelines import evaluate, run_ppq, run_spq, train_baseline
from .quant import QuantConfig, build_level_set, max_raw_level
from .shiftmac import verify_equivalence

PIPELINES = {"train": ("baseline", train_baseline), "spq": ("spq", run_spq), "ppq": ("ppq", run_ppq)}


def _load_run_config(path):
    raw = load_toml(path) if path else {}
    return raw, train_config_from_dict(raw), data_spec(raw)


def cmd_pipeline(args) -> int:
    raw, cfg, spec = _load_run_config(args.config)
    model_name = args.model or raw.get("model", "desknet-r8")
    train, test = load_datasets(spec)
    model = build_model(model_name, train.num_classes, seed=cfg.seed)
    stem, fn = PIPELINES[args.command]
    result = fn(model, train, cfg, test=test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.report["data"] = spec
    checkpoint.save(out / f"{stem}.pqck", result.checkpoint())
    json_path, csv_path = emit_report(result.report, result.records, out, stem)
    final = result.report["final"]
    print(f"{stem}: eval_acc={final['eval_acc']} test_acc={final['test_acc']} "
          f"pruned={final['pruned_fraction']:.4f}")
    print(f"wrote {out / (stem + '.pqck')}, {json_path}, {csv_path}")
    return 0


def cmd_eval(args) -> int:
    raw, cfg, spec = _load_run_config(args.config)
    entries = checkpoint.load(args.checkpoint)
    train, test = load_datasets(spec)
    model = build_model(args.model or raw.get("model", "desknet-r8"), train.num_classes, seed=cfg.seed)
    if args.quantized:
        model.configure_quantization(cfg.weight_quant, cfg.act_quant, cfg.first_last_bits)
    model.load_state(entries)
    fit, val = train_val_split(train, cfg.val_fraction, cfg.seed)
    target = val if test is None else test.with_normalization(fit.mean, fit.std)
    acc = evaluate(model, target, quantized=args.quantized)
    print(json.dumps({"split": target.split, "samples": len(target), "quantized": args.quantized,
                      "accuracy": acc}))
    return 0


def cmd_metrics(args) -> int:
    arch = load_arch(args.arch_file) if args.arch_file else builtin_arch(args.arch, args.image_size)
    policy = load_policy(args.policy) if args.policy else Policy.reference()
    report = compression_report(arch, Policy.baseline(), policy)
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    header = ("layer", "params", "MACs", "w/a bits", "survival", "size-bits", "bops")
    rows = [(r["layer"], r["params_kept"], r["macs_kept"], f"{r['weight_bits']}/{r['act_in_bits']}",
             f"{r['survival_in']:.3f}x{r['survival_out']:.3f}", r["size_bits"], r["bops"])
            for r in report["layers"]]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    for row in (header, *rows):
        print("  ".join(str(x).rjust(w) for x, w in zip(row, widths)))
    print(f"\nmodel size: {report['size_bits_baseline']} -> {report['size_bits_compressed']} bits "
          f"(x{report['size_ratio']:.2f})")
    print(f"BOPs:       {report['bops_baseline']} -> {report['bops_compressed']} "
          f"(x{report['bops_ratio']:.2f})")
    return 0


def _terms_text(terms) -> str:
    return " ".join(f"{'+' if s > 0 else '-'}2^-{e}" for s, e in terms)


def cmd_levels(args) -> int:
    ls = build_level_set(QuantConfig(args.b, args.k, signed=args.signed), args.alpha)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["index", "level", "terms"])
    for i, (level, terms) in enumerate(zip(ls.levels, ls.terms)):
        writer.writerow([i, repr(float(level)), _terms_text(terms)])
    print(f"# gamma={ls.gamma!r} alpha={ls.alpha!r} levels={len(ls)}", file=sys.stderr)
    return 0


def cmd_verify_shift(args) -> int:
    act_cfg = QuantConfig(args.b, args.k)
    acts = build_level_set(act_cfg, max_raw_level(act_cfg))
    status = 0
    for label, signed in (("unsigned weights", False), ("signed weights", True)):
        cfg = QuantConfig(args.b, args.k, signed=signed)
        weights = build_level_set(cfg, max_raw_level(cfg))
        report = verify_equivalence(weights, acts, strict=False)
        print(f"[{label}] b={args.b} k={args.k} ({len(acts)} activation x {len(weights)} weight levels)")
        print(report)
        status |= 0 if report.ok else 1
    return status


def cmd_hist(args) -> int:
    entries = checkpoint.load(args.checkpoint)
    sys.stdout.write(emit_histogram(entries, args.layer, args.bins))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pqcomp", description="GM filter pruning + APoT quantization toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_ in (("train", "full-precision baseline"), ("spq", "simultaneous prune + quantize"),
                        ("ppq", "staged pruning, then quantization-aware training")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--model", choices=("desknet-s", "desknet-r8"))
        sp.add_argument("--out", default="runs", help="output directory")
        sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the test split (validation split if none)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config")
    sp.add_argument("--model", choices=("desknet-s", "desknet-r8"))
    sp.add_argument("--quantized", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("metrics", help="model size and BOPs for an architecture")
    sp.add_argument("--arch", default="resnet20")
    sp.add_argument("--arch-file", help="descriptor file (TOML or JSON)")
    sp.add_argument("--policy", help="policy file (TOML or JSON); default: 30%% prune, 4/4 bits, 8-bit edges")
    sp.add_argument("--image-size", type=int, default=32)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("levels", help="dump an APoT level set as CSV")
    sp.add_argument("--b", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--signed", action="store_true")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.set_defaults(func=cmd_levels)

    sp = sub.add_parser("verify-shift", help="exhaustive shift-add vs exact product check")
    sp.add_argument("--b", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.set_defaults(func=cmd_verify_shift)

    sp = sub.add_parser("hist", help="weight histogram of one checkpoint layer as CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--layer", required=True)
    sp.add_argument("--bins", type=int, default=50)
    sp.set_defaults(func=cmd_hist)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
