"""Command-line entry points.

Exit codes: 0 success, 2 bad input (missing/invalid files or arguments),
3 runtime failure. Diagnostics go to stderr, results to files and stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import emit_offset_scatter, load_dataset, run_comparison, sigma_ablation
from .gdc import GdcConfig
from .images import load_image, load_mask, overlay_png_bytes, save_mask, save_probs
from .metrics import miou
from .network import NetConfig, segment_image
from .scribbles import expand_scribbles, parse_scribbles
from .slic import default_n_segments, slic
from .synthetic import write_suite

EXIT_BAD_INPUT = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdcseg")
    sub = p.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment one image from scribbles")
    seg.add_argument("--image", required=True)
    seg.add_argument("--scribbles", required=True)
    seg.add_argument("--gt", help="optional ground-truth mask for metrics")
    seg.add_argument("--sigma", type=float, default=0.2)
    seg.add_argument("--steps", type=int, default=50)
    seg.add_argument("--samples", type=int, default=50)
    seg.add_argument("--seed", type=int, default=0)
    seg.add_argument("--out", default="out")

    exp = sub.add_parser("experiment", help="run a harness")
    esub = exp.add_subparsers(dest="experiment", required=True)

    cmp_ = esub.add_parser("compare", help="kernel-variant comparison on a dataset")
    cmp_.add_argument("--dataset", required=True)
    cmp_.add_argument("--variants", nargs="+",
                      default=["normal", "dilated:6", "gdc:0.2", "uniform:1.0"])
    cmp_.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    cmp_.add_argument("--steps", type=int, default=50)
    cmp_.add_argument("--samples", type=int, default=50)
    cmp_.add_argument("--out", default="out")

    abl = esub.add_parser("ablate-sigma", help="sigma ablation on a dataset")
    abl.add_argument("--dataset", required=True)
    abl.add_argument("--sigmas", nargs="+", type=float, default=[0.1, 0.2, 0.3])
    abl.add_argument("--seed", type=int, default=0)
    abl.add_argument("--steps", type=int, default=50)
    abl.add_argument("--samples", type=int, default=50)
    abl.add_argument("--out", default="out")

    sca = esub.add_parser("scatter", help="emit offset scatter CSV + SVG")
    sca.add_argument("--sigma", type=float, default=0.2)
    sca.add_argument("--n", type=int, default=100)
    sca.add_argument("--seed", type=int, default=0)
    sca.add_argument("--scale", type=float, default=100.0)
    sca.add_argument("--out", default="out")

    ste = sub.add_parser("suite", help="generate the bundled synthetic dataset")
    ste.add_argument("--out", required=True)
    ste.add_argument("--images", type=int, default=20)
    ste.add_argument("--size", type=int, default=64)
    ste.add_argument("--seed", type=int, default=0)

    srv = sub.add_parser("serve", help="run the HTTP service (GDC_BIND=host:port)")
    srv.add_argument("--bind", default=None, help="overrides GDC_BIND")
    return p


def _cmd_segment(args) -> int:
    for path in (args.image, args.scribbles) + ((args.gt,) if args.gt else ()):
        if not Path(path).exists():
            print(f"error: file not found: {path}", file=sys.stderr)
            return EXIT_BAD_INPUT
    try:
        image = load_image(args.image)
        h, w = image.shape[1:]
        scr = parse_scribbles(Path(args.scribbles).read_text(), (h, w))
        if not scr.strokes:
            raise ValueError("scribble file has no strokes")
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT

    sp = slic(image, default_n_segments(h, w))
    mask, conflicts = expand_scribbles(sp, scr)
    ncat = max(scr.categories()) + 1
    config = NetConfig(num_categories=ncat, steps=args.steps,
                       inference_samples=args.samples,
                       gdc=GdcConfig(sigma=args.sigma, mode="per_direction",
                                     adaptive_scale=True),
                       stem_seed=args.seed)
    result, trace = segment_image(image, mask, config, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_mask(result.mask, out / "mask.png")
    (out / "overlay.png").write_bytes(overlay_png_bytes(image, result.mask))
    save_probs(result.probs, out / "probs.bin", sidecar={
        "categories": ncat, "seed": args.seed,
        "offset_samples": [json.loads(s.to_json()) for s in result.samples],
    })
    replay = {
        "seed": args.seed, "sigma": args.sigma, "steps": args.steps,
        "samples": args.samples, "categories": ncat,
        "superpixel_conflicts": conflicts, "final_loss": trace[-1],
        "offset_samples": [json.loads(s.to_json()) for s in result.samples],
    }
    (out / "replay.json").write_text(json.dumps(replay, indent=2))
    summary = f"wrote {out / 'mask.png'} (final loss {trace[-1]:.4f})"
    if args.gt:
        rep = miou(result.mask, load_mask(args.gt))
        (out / "metrics.json").write_text(json.dumps(
            {"miou": rep.miou, "overall_acc": rep.overall_acc,
             "per_category_iou": rep.per_category_iou}, indent=2))
        summary += f", mIoU {rep.miou:.4f}, acc {rep.overall_acc:.4f}"
    print(summary)
    return 0


def _cmd_experiment(args) -> int:
    if args.experiment == "scatter":
        info = emit_offset_scatter(args.sigma, n=args.n, seed=args.seed,
                                   out_dir=args.out, scale=args.scale)
        print(f"wrote {info['csv']} and {info['svg']} (mean radius {info['mean_radius']:.2f})")
        return 0
    if not Path(args.dataset).is_dir():
        print(f"error: dataset directory not found: {args.dataset}", file=sys.stderr)
        return EXIT_BAD_INPUT
    try:
        cases = load_dataset(args.dataset)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    if args.experiment == "compare":
        report = run_comparison(args.dataset, variants=tuple(args.variants),
                                seeds=tuple(args.seeds), steps=args.steps,
                                inference_samples=args.samples, out_dir=args.out,
                                cases=cases)
        for name, v in report["variants"].items():
            print(f"{name:>14}  acc {v['acc']:.4f}  mIoU {v['miou']:.4f}")
    else:
        report = sigma_ablation(args.dataset, sigmas=tuple(args.sigmas), seed=args.seed,
                                steps=args.steps, inference_samples=args.samples,
                                out_dir=args.out, cases=cases)
        for row in report["rows"]:
            print(f"sigma {row['sigma']:<4}  acc {row['acc']:.4f}  mIoU {row['miou']:.4f}")
    print(f"report written to {args.out}/ ({report['wall_time_s']:.1f}s)")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bind = args.bind or os.environ.get("GDC_BIND", "127.0.0.1:8080")
    host, _, port = bind.rpartition(":")
    uvicorn.run(create_app(), host=host or "127.0.0.1", port=int(port))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "segment":
            return _cmd_segment(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        if args.command == "suite":
            dirs = write_suite(args.out, n_images=args.images, size=args.size,
                               seed=args.seed)
            print(f"wrote {len(dirs)} cases under {args.out}")
            return 0
        if args.command == "serve":
            return _cmd_serve(args)
        return EXIT_BAD_INPUT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
