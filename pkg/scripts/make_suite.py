#!/usr/bin/env python3
"""Generate the bundled synthetic dataset (image/gt/scribble triplets)."""

import argparse

from gdcseg.synthetic import write_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/suite")
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    dirs = write_suite(args.out, n_images=args.images, size=args.size, seed=args.seed)
    print(f"wrote {len(dirs)} cases under {args.out}")


if __name__ == "__main__":
    main()
