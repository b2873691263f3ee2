"""Parameter count and float64 disk size of the reference configuration.

Also shows how the count moves with vocabulary size, since only the merge
count of the subword model is fixed, not the final vocabulary.

    python3 scripts/reference_params.py --vocab 32000 35000 37000
"""
import argparse
from dataclasses import replace

from autosizer.checkpoint import serialized_size
from autosizer.model import ModelConfig, count_parameters

TARGET = 98.2e6


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--vocab", type=int, nargs="+", default=[32000, 34000, 35000, 36000, 37000])
    args = p.parse_args()
    base = ModelConfig()
    print(f"{'vocab':>7} | {'parameters':>12} | {'vs 98.2M':>8} | {'MiB (f8)':>8}")
    for v in args.vocab:
        cfg = replace(base, vocab_size=v)
        n = count_parameters(cfg)
        mib = serialized_size(cfg, [f"w{i}" for i in range(v)]) / 2**20
        print(f"{v:>7} | {n:>12,} | {(n - TARGET) / TARGET:>+8.2%} | {mib:>8.1f}")


if __name__ == "__main__":
    main()
