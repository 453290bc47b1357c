#!/usr/bin/env python3
"""Kernel-variant comparison on a dataset directory (normal / dilated /
dynamic-Gaussian / uniform offsets), averaged over seeds."""

import argparse

from gdcseg.experiments import run_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", default="data/suite")
    ap.add_argument("--variants", nargs="+",
                    default=["normal", "dilated:6", "gdc:0.2", "uniform:1.0"])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--out", default="reports")
    args = ap.parse_args()
    report = run_comparison(args.dataset, variants=tuple(args.variants),
                            seeds=tuple(args.seeds), steps=args.steps,
                            inference_samples=args.samples, out_dir=args.out)
    for name, v in report["variants"].items():
        print(f"{name:>14}  acc {v['acc']:.4f}  mIoU {v['miou']:.4f}")
    print(f"({report['images']} images, seeds {report['seeds']}, "
          f"{report['wall_time_s']:.0f}s) -> {args.out}/comparison.csv")


if __name__ == "__main__":
    main()
