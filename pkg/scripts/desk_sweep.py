"""Regularization-strength sweep on the lexical-swap toy task.

Trains an unregularized baseline plus one run per swept lambda (FFN scope,
l2,1), then prints a size/quality table and one key=value record per run.

    python scripts/desk_sweep.py --seeds 1 2 3 --out results/sweep.jsonl
"""
import argparse
import logging
from pathlib import Path

from autosizer.autosize import SystemRow, render_table
from autosizer.experiment import SweepConfig, run_seed


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--lams", type=float, nargs="+", default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--regularizer", choices=["l21", "linf1"], default="l21")
    p.add_argument("--out", default=None, help="append JSON lines here")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = SweepConfig(regularizer=args.regularizer)
    if args.lams:
        cfg.lams = tuple(args.lams)
    if args.max_epochs:
        cfg.max_epochs = args.max_epochs
    sink = None
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        sink = open(args.out, "a", encoding="utf-8")

    def show(res):
        print(res.record(), flush=True)
        if sink:
            sink.write(res.to_json() + "\n")
            sink.flush()

    rows = []
    for seed in args.seeds:
        for res in run_seed(cfg, seed, show):
            name = "Baseline" if res.lam == 0 else f"FFN {cfg.regularizer}={res.lam:g}"
            rows.append(SystemRow(f"{name} (seed {seed})", res.bytes_after, res.params_after,
                                  {"Acc%": 100 * res.val_acc, "Pruned%": 100 * res.pruned_fraction}))
    print()
    print(render_table(rows))


if __name__ == "__main__":
    main()
