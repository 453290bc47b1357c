"""Experiment harnesses: offset scatter, kernel-variant comparison, sigma
ablation, and a feature-diversity probe. Everything is seed-reproducible and
reports land as CSV/JSON."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gdc import GdcConfig, OffsetSample, direction_basis, draw_offsets
from .images import load_image, load_mask
from .metrics import miou
from .network import NetConfig, OffsetSampler, SegNet, optimize_single_image, segment_image
from .scribbles import LabelMask, expand_scribbles, parse_scribbles
from .slic import default_n_segments, slic


# ---------------------------------------------------------------------------
# offset scatter (receptive-field visualization)

def scatter_points(sigma: float, n: int = 100, seed: int = 0, scale: float = 100.0,
                   mode: str = "per_direction", delta_base: float = 0.0) -> np.ndarray:
    """Tap displacements of ``n`` offset draws, rows of (sample, direction, dy, dx)."""
    cfg = GdcConfig(sigma=sigma, mode=mode, delta_base=delta_base,
                    adaptive_scale=mode == "per_direction")
    short_side = int(scale) if cfg.adaptive_scale else None
    basis = direction_basis(3)
    rows = []
    for i in range(n):
        sample = draw_offsets(seed * 100_003 + i, cfg, short_side)
        disp = sample.displacements()
        for d in range(9):
            if d == 4:
                continue
            rows.append((i, d, int(disp[d, 0]), int(disp[d, 1])))
    return np.asarray(rows, dtype=np.int64)


def mean_tap_radius(sigma: float, n: int = 1000, seed: int = 0, scale: float = 100.0) -> float:
    pts = scatter_points(sigma, n=n, seed=seed, scale=scale)
    return float(np.sqrt((pts[:, 2:] ** 2).sum(axis=1)).mean())


def emit_offset_scatter(sigma: float, n: int = 100, seed: int = 0, out_dir=".",
                        scale: float = 100.0, mode: str = "per_direction",
                        delta_base: float = 0.0) -> dict:
    """Write scatter.csv and scatter.svg of the sampled tap positions."""
    pts = scatter_points(sigma, n=n, seed=seed, scale=scale, mode=mode, delta_base=delta_base)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"scatter_sigma{sigma}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "direction", "dy", "dx"])
        w.writerows(pts.tolist())
    radius = float(np.sqrt((pts[:, 2:] ** 2).sum(axis=1)).mean())
    svg_path = out / f"scatter_sigma{sigma}.svg"
    _write_scatter_svg(svg_path, pts, sigma)
    return {"csv": str(csv_path), "svg": str(svg_path), "points": pts,
            "mean_radius": radius}


def _write_scatter_svg(path, pts, sigma) -> None:
    lim = max(10, int(np.abs(pts[:, 2:]).max()) + 5)
    size = 400
    def sx(v):
        return (v + lim) / (2 * lim) * size
    bits = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>',
            f'<text x="8" y="16" font-size="12">sigma={sigma}, {len(pts)} taps</text>',
            f'<circle cx="{sx(0)}" cy="{sx(0)}" r="4" fill="red"/>']
    for _, _, dy, dx in pts:
        bits.append(f'<circle cx="{sx(dx):.1f}" cy="{sx(dy):.1f}" r="1.5" '
                    f'fill="steelblue" fill-opacity="0.45"/>')
    bits.append("</svg>")
    Path(path).write_text("\n".join(bits))


# ---------------------------------------------------------------------------
# kernel variants

class PinnedSampler:
    """Fixed offsets: <1,1> is a plain 3x3 pattern, <d,d> a dilated one."""

    stochastic = False

    def __init__(self, value: float):
        self.value = float(value)

    def draw(self, seed: int) -> OffsetSample:
        return OffsetSample.pinned(self.value)


class UniformSampler:
    """Offsets U[0, range) per coordinate, scaled like the adaptive Gaussian ones."""

    stochastic = True

    def __init__(self, spread: float, image_short_side: int):
        self.spread = float(spread)
        self.short_side = image_short_side

    def draw(self, seed: int) -> OffsetSample:
        rng = np.random.default_rng(seed)
        offsets = rng.uniform(0.0, self.spread, (8, 2))
        return OffsetSample(mode="per_direction", offsets=offsets,
                            scale=float(self.short_side), sigma=0.0, seed=seed)


def make_sampler(variant: str, image_short_side: int):
    """Parse 'normal' | 'dilated:D' | 'gdc:SIGMA' | 'uniform:RANGE'."""
    name, _, arg = variant.partition(":")
    if name == "normal":
        return PinnedSampler(1.0)
    if name == "dilated":
        return PinnedSampler(float(arg or 6))
    if name == "gdc":
        cfg = GdcConfig(sigma=float(arg or 0.2), mode="per_direction", adaptive_scale=True)
        return OffsetSampler(cfg, image_short_side)
    if name == "uniform":
        return UniformSampler(float(arg or 1.0), image_short_side)
    raise ValueError(f"unknown kernel variant {variant!r}")


# ---------------------------------------------------------------------------
# dataset plumbing

@dataclass
class DatasetCase:
    name: str
    image: np.ndarray
    gt: np.ndarray
    mask: LabelMask
    num_categories: int


def load_dataset(dataset_dir) -> list[DatasetCase]:
    """Load image/gt/scribble triplets and expand scribbles once per image."""
    root = Path(dataset_dir)
    case_dirs = sorted(d for d in root.iterdir() if (d / "image.png").exists())
    if not case_dirs:
        raise ValueError(f"no image/scribbles/gt triplets under {root}")
    cases = []
    for d in case_dirs:
        for required in ("image.png", "scribbles.json", "gt.png"):
            if not (d / required).exists():
                raise ValueError(f"{d} is missing {required}")
        image = load_image(d / "image.png")
        gt = load_mask(d / "gt.png")
        h, w = image.shape[1:]
        scr = parse_scribbles((d / "scribbles.json").read_text(), (h, w))
        sp = slic(image, default_n_segments(h, w))
        mask, _ = expand_scribbles(sp, scr)
        ncat = max(scr.categories()) + 1
        if gt.max() >= ncat:
            ncat = int(gt.max()) + 1
        cases.append(DatasetCase(name=d.name, image=image, gt=gt, mask=mask,
                                 num_categories=ncat))
    return cases


# ---------------------------------------------------------------------------
# comparison / ablation harnesses

def run_comparison(dataset_dir, variants=("normal", "dilated:6", "gdc:0.2", "uniform:1.0"),
                   seeds=(0, 1, 2), steps: int = 50, inference_samples: int = 50,
                   out_dir=None, cases: list[DatasetCase] | None = None) -> dict:
    """Train the per-image net once per (image, variant, seed); report means.

    mIoU is averaged over categories present in each image's ground truth,
    then over images, then over seeds.
    """
    if cases is None:
        cases = load_dataset(dataset_dir)
    t0 = time.perf_counter()
    per_variant = {}
    for variant in variants:
        per_seed = []
        for seed in seeds:
            mious, accs = [], []
            for case in cases:
                sampler = make_sampler(variant, min(case.image.shape[1:]))
                config = NetConfig(num_categories=case.num_categories, steps=steps,
                                   inference_samples=inference_samples, stem_seed=seed)
                result, _ = segment_image(case.image, case.mask, config, seed,
                                          sampler=sampler)
                rep = miou(result.mask, case.gt)
                mious.append(rep.miou)
                accs.append(rep.overall_acc)
            per_seed.append({"seed": seed, "miou": float(np.mean(mious)),
                             "acc": float(np.mean(accs))})
        per_variant[variant] = {
            "per_seed": per_seed,
            "miou": float(np.mean([s["miou"] for s in per_seed])),
            "acc": float(np.mean([s["acc"] for s in per_seed])),
        }
    report = {
        "variants": per_variant,
        "seeds": list(seeds),
        "images": len(cases),
        "steps": steps,
        "inference_samples": inference_samples,
        "wall_time_s": time.perf_counter() - t0,
    }
    if out_dir is not None:
        _write_report(out_dir, "comparison", report)
    return report


def sigma_ablation(dataset_dir, sigmas=(0.1, 0.2, 0.3), seed: int = 0, steps: int = 50,
                   inference_samples: int = 50, out_dir=None,
                   cases: list[DatasetCase] | None = None) -> dict:
    """Same harness, varying only the offset spread."""
    variants = tuple(f"gdc:{s}" for s in sigmas)
    report = run_comparison(dataset_dir, variants=variants, seeds=(seed,), steps=steps,
                            inference_samples=inference_samples, cases=cases)
    rows = [{"sigma": s, "miou": report["variants"][f"gdc:{s}"]["miou"],
             "acc": report["variants"][f"gdc:{s}"]["acc"]} for s in sigmas]
    out = {"rows": rows, "seed": seed, "images": report["images"],
           "wall_time_s": report["wall_time_s"]}
    if out_dir is not None:
        _write_report(out_dir, "sigma_ablation", out)
    return out


def _write_report(out_dir, stem: str, report: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(report, indent=2))
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        if "rows" in report:
            w.writerow(["sigma", "acc", "miou"])
            for row in report["rows"]:
                w.writerow([row["sigma"], f"{row['acc']:.4f}", f"{row['miou']:.4f}"])
        else:
            w.writerow(["variant", "acc", "miou"])
            for name, v in report["variants"].items():
                w.writerow([name, f"{v['acc']:.4f}", f"{v['miou']:.4f}"])


# ---------------------------------------------------------------------------
# feature diversity

def feature_diversity(net: SegNet, image: np.ndarray, n_samples: int = 16,
                      seed: int = 0, sampler=None) -> float:
    """Mean per-position variance of the dynamic-branch features across draws."""
    if sampler is None:
        sampler = OffsetSampler(net.config.gdc, min(image.shape[1:]))
    features = net.extract_features(image)
    rng = np.random.default_rng(seed)
    outs = []
    for _ in range(n_samples):
        sample = sampler.draw(int(rng.integers(0, 2 ** 63 - 1)))
        outs.append(net.gdc_branch(features, sample).data.astype(np.float64))
    stack = np.stack(outs)
    return float(stack.var(axis=0).mean())
