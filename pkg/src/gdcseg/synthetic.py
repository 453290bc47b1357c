"""Bundled synthetic evaluation suite: images, ground truth, auto-scribbles.

Five families keep the ordering experiments honest at desk scale:

* twin strips: identical-looking outer strips with different categories, so
  the call depends on direction-resolved mid-range context;
* flat regions separated by straight or curved boundaries, plus pixel noise;
* density textures: both regions tile the same two colors, only the tile
  density differs, so any small window is ambiguous and the region identity
  is a mid-range context statistic;
* quadrant layouts with four flat categories;
* gradient backgrounds with a distinct compact object.

Ground truth is programmatic; scribbles are skeleton strokes traced along
the interior distance ridge of each region, sized with the region so the
per-category pixel-fraction loss weights stay sane.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .images import save_image, save_mask
from .scribbles import ScribbleSet, Stroke

_EIGHT = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def region_stroke(mask: np.ndarray, max_len: int | None = None, radius: int | None = None) -> Stroke | None:
    """A polyline along the interior distance ridge of a boolean region.

    Distance counts the image border as background, so the walk starts at the
    region's incenter and follows the medial axis, like a human scribbling
    through the middle of a region rather than hugging its corners.
    """
    if not mask.any():
        return None
    h, w = mask.shape
    if max_len is None:
        max_len = max(h, w) // 2
    if radius is None:
        radius = int(np.clip(round(np.sqrt(mask.sum()) / max(h, w) * 4), 1, 3))
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    dt = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    start = np.unravel_index(int(dt.argmax()), dt.shape)
    if dt[start] < 1.5:  # too thin to stroke safely
        y, x = start
        return Stroke(category=0, points=[(int(x), int(y))], radius=1)

    def walk(visited):
        cur = start
        path = []
        for _ in range(max_len):
            best = None
            best_d = 1.5
            for dy, dx in _EIGHT:
                ny, nx = cur[0] + dy, cur[1] + dx
                if 0 <= ny < h and 0 <= nx < w and (ny, nx) not in visited and dt[ny, nx] > best_d:
                    best, best_d = (ny, nx), dt[ny, nx]
            if best is None:
                break
            cur = best
            visited.add(cur)
            path.append(cur)
        return path

    visited = {start}
    forward = walk(visited)
    backward = walk(visited)  # second pass extends the other way along the ridge
    path = backward[::-1] + [start] + forward
    pts = [(int(x), int(y)) for y, x in path[::2] + [path[-1]]]
    return Stroke(category=0, points=pts, radius=radius)


def scribbles_for_gt(gt: np.ndarray, radius: int | None = None) -> ScribbleSet:
    strokes = []
    for cat in np.unique(gt):
        s = region_stroke(gt == cat, radius=radius)
        if s is not None:
            s.category = int(cat)
            strokes.append(s)
    return ScribbleSet(strokes=strokes)


def _flat_regions(rng, size: int):
    h = w = size
    kind = rng.integers(0, 3)
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:
        split = int(rng.integers(w // 3, 2 * w // 3))
        gt = (xx >= split).astype(np.int32)
    elif kind == 1:
        cy, cx = rng.uniform(0.35, 0.65, 2) * size
        r = rng.uniform(0.2, 0.32) * size
        gt = (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(np.int32)
    else:
        slope = rng.uniform(-1.2, 1.2)
        gt = (yy > slope * (xx - w / 2) + h / 2).astype(np.int32)
    c0 = rng.uniform(0.1, 0.45, 3)
    c1 = rng.uniform(0.55, 0.9, 3)
    img = np.where(gt[None] == 0, c0[:, None, None], c1[:, None, None])
    img = img + rng.standard_normal((3, h, w)) * 0.08
    return np.clip(img, 0, 1).astype(np.float32), gt


def _density_texture(rng, size: int, tile: int | None = None,
                     contrast: tuple[float, float] | None = None):
    """Same two tile colors everywhere; regions differ only in dark-tile density."""
    h = w = size
    xx = np.mgrid[0:h, 0:w][1]
    split = int(rng.integers(w // 3, 2 * w // 3))
    gt = (xx >= split).astype(np.int32)
    if tile is None:
        tile = int(rng.integers(6, 11))
    if contrast is None:
        contrast = (0.25, 0.75) if rng.integers(0, 2) == 0 else (0.35, 0.65)
    p0, p1 = contrast
    ty = -(-h // tile)
    tx = -(-w // tile)
    cells = rng.random((ty, tx))
    cell_x = np.mgrid[0:ty, 0:tx][1] * tile
    dark = cells < np.where(cell_x >= split, p1, p0)
    tiles = np.kron(dark, np.ones((tile, tile), dtype=bool))[:h, :w]
    shade = rng.uniform(0.9, 1.1)
    base = np.where(tiles, 0.25, 0.75) * shade
    img = np.stack([base, base, base]) + rng.standard_normal((3, h, w)) * 0.05
    return np.clip(img, 0, 1).astype(np.float32), gt


def _twin_strips(rng, size: int):
    """Outer strips share one color but carry different categories; telling
    them apart requires knowing which side the middle strip is on."""
    h = w = size
    xx = np.mgrid[0:h, 0:w][1]
    b1 = int(rng.integers(int(w * 0.33), int(w * 0.40)))
    b2 = int(rng.integers(int(w * 0.60), int(w * 0.67)))
    gt = np.where(xx < b1, 0, np.where(xx < b2, 1, 2)).astype(np.int32)
    ca = rng.uniform(0.15, 0.45, 3)
    cb = rng.uniform(0.55, 0.9, 3)
    img = np.where(gt[None] == 1, cb[:, None, None], ca[:, None, None])
    img = img + rng.standard_normal((3, h, w)) * 0.06
    return np.clip(img, 0, 1).astype(np.float32), gt


def _gradient_object(rng, size: int):
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    grad = (xx / (w - 1)) if rng.integers(0, 2) == 0 else (yy / (h - 1))
    lo = rng.uniform(0.1, 0.25, 3)
    hi = rng.uniform(0.5, 0.65, 3)
    bg = lo[:, None, None] + grad[None] * (hi - lo)[:, None, None]
    cy, cx = rng.uniform(0.32, 0.68, 2) * size
    ry, rx = rng.uniform(0.22, 0.32, 2) * size
    gt = ((((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1.0).astype(np.int32)
    obj = rng.uniform(0.75, 0.95, 3)
    img = np.where(gt[None] == 1, obj[:, None, None], bg)
    img = img + rng.standard_normal((3, h, w)) * 0.05
    return np.clip(img, 0, 1).astype(np.float32), gt


def _quadrants(rng, size: int):
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    sy = int(rng.integers(h // 3, 2 * h // 3))
    sx = int(rng.integers(w // 3, 2 * w // 3))
    gt = ((yy >= sy).astype(np.int32) * 2 + (xx >= sx)).astype(np.int32)
    colors = rng.uniform(0.1, 0.9, (4, 3))
    while True:  # keep the four colors apart enough to be learnable
        d = np.linalg.norm(colors[:, None] - colors[None], axis=-1)
        np.fill_diagonal(d, 1.0)
        if d.min() > 0.25:
            break
        colors = rng.uniform(0.1, 0.9, (4, 3))
    img = colors[gt].transpose(2, 0, 1)
    img = img + rng.standard_normal((3, h, w)) * 0.09
    return np.clip(img, 0, 1).astype(np.float32), gt


FAMILIES = {
    "twin_strips": _twin_strips,
    "flat": _flat_regions,
    "density": _density_texture,
    "quadrants": _quadrants,
    "gradient": _gradient_object,
}

# fixed 20-slot schedule; context-dependent families carry the orderings,
# the rest keep the appearance mix broad
SCHEDULE = [
    "twin_strips", "flat", "density", "twin_strips", "quadrants",
    "density", "twin_strips", "gradient", "flat", "twin_strips",
    "quadrants", "density", "twin_strips", "gradient", "flat",
    "twin_strips", "quadrants", "density", "twin_strips", "gradient",
]

# twin strips need room between the outer strips and the middle evidence
SIZE_FACTORS = {"twin_strips": 1.5}


def generate_case(index: int, size: int = 64, seed: int = 0):
    """Deterministic (image, gt, scribbles) for one suite entry."""
    rng = np.random.default_rng(seed * 10_000 + index)
    name = SCHEDULE[index % len(SCHEDULE)]
    case_size = int(round(size * SIZE_FACTORS.get(name, 1.0)))
    img, gt = FAMILIES[name](rng, case_size)
    return img, gt, scribbles_for_gt(gt)


def two_region_fixture(size: int = 64):
    """The canonical flat two-region image with one scribble per region."""
    rng = np.random.default_rng(42)
    h = w = size
    xx = np.mgrid[0:h, 0:w][1]
    gt = (xx >= w // 2).astype(np.int32)
    img = np.where(gt[None] == 0, np.array([0.15, 0.3, 0.7])[:, None, None],
                   np.array([0.8, 0.55, 0.2])[:, None, None])
    img = np.clip(img + rng.standard_normal((3, h, w)) * 0.04, 0, 1).astype(np.float32)
    scr = ScribbleSet(strokes=[
        Stroke(category=0, points=[(w // 8, h // 8), (w // 8, 7 * h // 8)], radius=2),
        Stroke(category=1, points=[(7 * w // 8, h // 8), (7 * w // 8, 7 * h // 8)], radius=2),
    ])
    return img, gt, scr


def write_suite(out_dir, n_images: int = 20, size: int = 64, seed: int = 0) -> list[Path]:
    """Write image/gt/scribble triplets: <out>/imgNNN/{image.png,gt.png,scribbles.json}."""
    out = Path(out_dir)
    dirs = []
    for i in range(n_images):
        img, gt, scr = generate_case(i, size=size, seed=seed)
        d = out / f"img{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        save_image(img, d / "image.png")
        save_mask(gt, d / "gt.png")
        (d / "scribbles.json").write_text(scr.to_json(image="image.png"))
        dirs.append(d)
    return dirs
