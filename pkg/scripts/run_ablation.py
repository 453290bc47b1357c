#!/usr/bin/env python3
"""Offset-spread ablation: rerun the comparison harness varying sigma only."""

import argparse

from gdcseg.experiments import sigma_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", default="data/suite")
    ap.add_argument("--sigmas", nargs="+", type=float, default=[0.1, 0.2, 0.3])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--out", default="reports")
    args = ap.parse_args()
    report = sigma_ablation(args.dataset, sigmas=tuple(args.sigmas), seed=args.seed,
                            steps=args.steps, inference_samples=args.samples,
                            out_dir=args.out)
    for row in report["rows"]:
        print(f"sigma {row['sigma']:<5} acc {row['acc']:.4f}  mIoU {row['miou']:.4f}")


if __name__ == "__main__":
    main()
