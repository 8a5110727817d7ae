#!/usr/bin/env python3
"""Generate a deterministic toy text corpus for the pruning experiments."""
import argparse
from pathlib import Path

import numpy as np

WORDS = ["the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "and", "runs"]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", type=Path)
    p.add_argument("--words", type=int, default=3000)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    args.out.write_text(" ".join(rng.choice(WORDS) for _ in range(args.words)))
    print(f"wrote {args.out} ({args.out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
