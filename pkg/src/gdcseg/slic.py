"""SLIC superpixels: labxy k-means with grid seeding, then connectivity repair.

Distance between a pixel and a cluster center is
``D = sqrt(d_lab^2 + (d_xy / S)^2 * m^2)`` with grid step ``S = sqrt(HW/n)``
and compactness ``m``. Assignment searches a 2S window around each center;
orphan components left after clustering are merged into their largest
neighbouring region so every superpixel is one 4-connected blob with ids
dense in [0, count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # (H,W) int32
    count: int


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB in [0,1], shape (3,H,W) -> CIELAB (D65 white point)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    r, g, b = lin
    x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b
    y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b
    xn, yn, zn = 0.95047, 1.0, 1.08883
    def f(t):
        d = 6.0 / 29.0
        return np.where(t > d ** 3, np.cbrt(t), t / (3 * d * d) + 4.0 / 29.0)
    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    lab_l = 116.0 * fy - 16.0
    lab_a = 500.0 * (fx - fy)
    lab_b = 200.0 * (fy - fz)
    return np.stack([lab_l, lab_a, lab_b])


def _grid_seeds(h: int, w: int, n_segments: int) -> np.ndarray:
    gw = max(1, round(np.sqrt(n_segments * w / h)))
    gh = max(1, round(n_segments / gw))
    ys = (np.arange(gh) + 0.5) * h / gh
    xs = (np.arange(gw) + 0.5) * w / gw
    return np.array([(y, x) for y in ys for x in xs])


def slic_kmeans(image: np.ndarray, n_segments: int, compactness: float = 10.0,
                iters: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Raw labxy clustering; returns (labels, centers) before connectivity repair.

    Centers are rows of (L, a, b, y, x). Assignment ties keep the lower
    cluster id, so the result is independent of any parallel split.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) RGB image, got {image.shape}")
    _, h, w = image.shape
    if n_segments < 1 or iters < 1:
        raise ValueError("n_segments and iters must be >= 1")
    if n_segments > h * w:
        raise ValueError(f"image {h}x{w} smaller than one cell for {n_segments} segments")
    lab = rgb_to_lab(image)
    step = np.sqrt(h * w / n_segments)
    seeds = _grid_seeds(h, w, n_segments)
    iy = np.clip(np.round(seeds[:, 0]).astype(int), 0, h - 1)
    ix = np.clip(np.round(seeds[:, 1]).astype(int), 0, w - 1)
    centers = np.column_stack([lab[:, iy, ix].T, seeds])
    n = centers.shape[0]
    m2s2 = (compactness / step) ** 2
    yy = np.arange(h)
    xx = np.arange(w)
    labels = np.zeros((h, w), dtype=np.int32)

    def assign():
        best = np.full((h, w), np.inf)
        lbl = np.full((h, w), -1, dtype=np.int32)
        r = int(np.ceil(2 * step))
        for c in range(n):
            cl, ca, cb, cy, cx = centers[c]
            y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
            x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            win = lab[:, y0:y1, x0:x1]
            dlab = (win[0] - cl) ** 2 + (win[1] - ca) ** 2 + (win[2] - cb) ** 2
            dxy = (yy[y0:y1, None] - cy) ** 2 + (xx[None, x0:x1] - cx) ** 2
            d = dlab + dxy * m2s2
            sub = best[y0:y1, x0:x1]
            better = d < sub
            sub[better] = d[better]
            lbl[y0:y1, x0:x1][better] = c
        missing = lbl < 0
        if missing.any():  # centers drifted away; fall back to a global search
            ys, xs = np.nonzero(missing)
            dl = lab[:, ys, xs]
            d = ((dl[0][None] - centers[:, 0:1]) ** 2 + (dl[1][None] - centers[:, 1:2]) ** 2
                 + (dl[2][None] - centers[:, 2:3]) ** 2
                 + ((ys[None] - centers[:, 3:4]) ** 2 + (xs[None] - centers[:, 4:5]) ** 2) * m2s2)
            lbl[ys, xs] = d.argmin(axis=0)
        return lbl

    for _ in range(iters):
        labels = assign()
        for c in range(n):
            mask = labels == c
            if not mask.any():
                continue
            ys, xs = np.nonzero(mask)
            centers[c, :3] = lab[:, ys, xs].mean(axis=1)
            centers[c, 3] = ys.mean()
            centers[c, 4] = xs.mean()
    labels = assign()
    return labels, centers


def pixel_center_distance(lab: np.ndarray, y: int, x: int, center: np.ndarray,
                          step: float, compactness: float) -> float:
    """The clustering distance D for one pixel/center pair (diagnostic helper)."""
    dlab2 = float(((lab[:, y, x] - center[:3]) ** 2).sum())
    dxy2 = float((y - center[3]) ** 2 + (x - center[4]) ** 2)
    return np.sqrt(dlab2 + dxy2 / step ** 2 * compactness ** 2)


def _enforce_connectivity(labels: np.ndarray, count: int) -> tuple[np.ndarray, int]:
    h, w = labels.shape
    comp_map = np.zeros((h, w), dtype=np.int64)
    comp_label = [0]  # comp id 0 unused
    next_id = 1
    for l in range(count):
        mask = labels == l
        if not mask.any():
            continue
        cl, nc = ndimage.label(mask, structure=_FOUR)
        comp_map[mask] = cl[mask] + (next_id - 1)
        comp_label.extend([l] * nc)
        next_id += nc
    comp_label = np.asarray(comp_label, dtype=np.int64)
    sizes = np.bincount(comp_map.ravel(), minlength=next_id)
    kept: dict[int, int] = {}  # raw label -> comp id of its largest component
    for comp in range(1, next_id):
        l = comp_label[comp]
        if l not in kept or sizes[comp] > sizes[kept[l]]:
            kept[int(l)] = comp
    keep_set = set(kept.values())
    # adjacency between components via 4-neighbour boundaries
    adj: dict[int, set[int]] = {c: set() for c in range(1, next_id)}
    for a, b in ((comp_map[:, :-1], comp_map[:, 1:]), (comp_map[:-1, :], comp_map[1:, :])):
        diff = a != b
        for u, v in zip(a[diff].ravel(), b[diff].ravel()):
            adj[u].add(v)
            adj[v].add(u)
    owner = {c: c for c in range(1, next_id)}

    def find(c: int) -> int:
        while owner[c] != c:
            owner[c] = owner[owner[c]]
            c = owner[c]
        return c

    orphans = sorted(c for c in range(1, next_id) if c not in keep_set)
    merged_sizes = sizes.astype(np.int64)
    while orphans:
        remaining = []
        progressed = False
        for c in orphans:
            targets = {find(nb) for nb in adj[c]} - {c}
            kept_targets = targets & keep_set
            if kept_targets:
                tgt = max(kept_targets, key=lambda t: (merged_sizes[t], -t))
                owner[c] = tgt
                merged_sizes[tgt] += sizes[c]
                progressed = True
            else:
                remaining.append(c)
        if not progressed and remaining:
            # orphan pocket with no kept neighbour yet; chain into a neighbour
            c = remaining.pop(0)
            targets = sorted({find(nb) for nb in adj[c]} - {c})
            owner[c] = targets[0]
        orphans = remaining
    final_raw = comp_label[[find(c) if c else 0 for c in range(next_id)]]
    raw = final_raw[comp_map]
    present = np.unique(raw[comp_map > 0]) if (comp_map > 0).any() else np.array([], dtype=np.int64)
    remap = np.full(count, -1, dtype=np.int32)
    remap[present] = np.arange(len(present), dtype=np.int32)
    return remap[raw].astype(np.int32), len(present)


def slic(image: np.ndarray, n_segments: int, compactness: float = 10.0,
         iters: int = 10) -> SuperpixelMap:
    """Over-segment an RGB image; every returned superpixel is 4-connected."""
    raw, _ = slic_kmeans(image, n_segments, compactness, iters)
    labels, count = _enforce_connectivity(raw, int(raw.max()) + 1)
    return SuperpixelMap(labels=labels, count=count)


def default_n_segments(h: int, w: int) -> int:
    """Roughly 16x16-pixel cells, at least one."""
    return max(1, (h * w) // 256)
