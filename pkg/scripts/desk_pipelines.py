"""Train baseline, SPQ and PPQ on the desk configuration and compare them.

    python scripts/desk_pipelines.py [--config configs/desk.toml] [--out runs/desk]

Writes one JSON report, one epoch CSV and one checkpoint per pipeline.
"""
import argparse
import logging
from pathlib import Path

from pqcomp import checkpoint
from pqcomp.config import data_spec, load_datasets, load_toml, train_config_from_dict
from pqcomp.data import emit_report
from pqcomp.models import build_model
from pqcomp.pipelines import run_ppq, run_spq, train_baseline

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=ROOT / "configs" / "desk.toml", type=Path)
    p.add_argument("--out", default=ROOT / "runs" / "desk", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    raw = load_toml(args.config)
    cfg = train_config_from_dict(raw)
    train, test = load_datasets(data_spec(raw))
    rows = []
    for stem, fn in (("baseline", train_baseline), ("spq", run_spq), ("ppq", run_ppq)):
        result = fn(build_model(raw["model"], train.num_classes, cfg.seed), train, cfg, test=test)
        emit_report(result.report, result.records, args.out, stem)
        checkpoint.save(args.out / f"{stem}.pqck", result.checkpoint())
        final, metrics = result.report["final"], result.report["metrics"]
        rows.append((stem, final["train_acc"], final["test_acc"], final["pruned_fraction"],
                     metrics["size_ratio"], metrics["bops_ratio"]))
        print(f"finished {stem}")

    print(f"\n{'pipeline':<9} {'train':>6} {'test':>6} {'pruned':>7} {'size x':>7} {'BOPs x':>7}")
    for stem, tr, te, pf, sr, br in rows:
        te_text = "-" if te is None else f"{te:.3f}"
        print(f"{stem:<9} {tr:>6.3f} {te_text:>6} {pf:>7.3f} {sr:>7.2f} {br:>7.2f}")
    print(f"\nreports in {args.out}")


if __name__ == "__main__":
    main()
