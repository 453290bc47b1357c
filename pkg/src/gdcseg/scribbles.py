"""Scribble strokes, rasterization, and superpixel label expansion.

A stroke is a polyline plus a brush radius and a category id. Strokes are
stamped into pixel masks, superpixels overlapped by a stroke adopt that
stroke's category on all their pixels, and category weights are pixel-count
fractions over the labeled area.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .slic import SuperpixelMap

UNLABELED = -1


@dataclass
class Stroke:
    category: int
    points: list  # [(x, y), ...] pixel integers, origin top-left
    radius: int = 1

    def __post_init__(self):
        if self.category < 0:
            raise ValueError(f"category must be >= 0, got {self.category}")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if not self.points:
            raise ValueError("stroke needs at least one point")
        self.points = [(int(x), int(y)) for x, y in self.points]


@dataclass
class ScribbleSet:
    strokes: list = field(default_factory=list)

    def categories(self) -> list[int]:
        return sorted({s.category for s in self.strokes})

    def to_json(self, image: str | None = None) -> str:
        doc = {"strokes": [
            {"category": s.category, "radius": s.radius,
             "points": [[x, y] for x, y in s.points]} for s in self.strokes]}
        if image is not None:
            doc["image"] = image
        return json.dumps(doc, indent=2)


@dataclass
class LabelMask:
    labels: np.ndarray  # (H,W) int32, UNLABELED where no category applies

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)

    @property
    def shape(self):
        return self.labels.shape

    def labeled_count(self) -> int:
        return int((self.labels >= 0).sum())


def parse_scribbles(text: str, bounds: tuple[int, int]) -> ScribbleSet:
    """Parse the scribble JSON document; out-of-bounds coordinates are rejected."""
    h, w = bounds
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"invalid scribble JSON: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("strokes"), list):
        raise ValueError("scribble document must contain a 'strokes' list")
    strokes = []
    for i, s in enumerate(doc["strokes"]):
        try:
            stroke = Stroke(category=int(s["category"]),
                            points=[(int(p[0]), int(p[1])) for p in s["points"]],
                            radius=int(s.get("radius", 1)))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ValueError(f"malformed stroke {i}: {e}") from e
        for x, y in stroke.points:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"stroke {i} point ({x},{y}) outside image {w}x{h}")
        strokes.append(stroke)
    return ScribbleSet(strokes=strokes)


def _disc_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dy * dy + dx * dx <= r * r
    return dy[keep], dx[keep]


def rasterize_stroke(stroke: Stroke, shape: tuple[int, int]) -> np.ndarray:
    """Boolean mask of the disc-stamped polyline, clipped to the image."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    dys, dxs = _disc_offsets(stroke.radius)
    pts = stroke.points
    segments = zip(pts, pts[1:]) if len(pts) > 1 else [(pts[0], pts[0])]
    for (x0, y0), (x1, y1) in segments:
        steps = max(abs(x1 - x0), abs(y1 - y0)) + 1
        xs = np.round(np.linspace(x0, x1, steps)).astype(int)
        ys = np.round(np.linspace(y0, y1, steps)).astype(int)
        for cx, cy in zip(xs, ys):
            yy = cy + dys
            xx = cx + dxs
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            mask[yy[ok], xx[ok]] = True
    return mask


def rasterize(scribbles: ScribbleSet, shape: tuple[int, int]) -> list[tuple[int, np.ndarray]]:
    """Per-stroke (category, mask) pairs."""
    return [(s.category, rasterize_stroke(s, shape)) for s in scribbles.strokes]


def expand_scribbles(sp: SuperpixelMap, scribbles: ScribbleSet) -> tuple[LabelMask, int]:
    """Propagate stroke categories to whole superpixels.

    A superpixel overlapped by strokes of several categories goes to the
    category with the most overlapping stroke pixels, ties to the lower id;
    the number of such conflicted superpixels is returned alongside the mask.
    """
    h, w = sp.labels.shape
    if not scribbles.strokes:
        return LabelMask(np.full((h, w), UNLABELED, dtype=np.int32)), 0
    n_cat = max(s.category for s in scribbles.strokes) + 1
    votes = np.zeros((sp.count, n_cat), dtype=np.int64)
    for category, mask in rasterize(scribbles, (h, w)):
        ids, cnts = np.unique(sp.labels[mask], return_counts=True)
        votes[ids, category] += cnts
    touched = votes.sum(axis=1) > 0
    winner = np.where(touched, votes.argmax(axis=1), UNLABELED).astype(np.int32)
    conflicts = int(((votes > 0).sum(axis=1) > 1).sum())
    return LabelMask(winner[sp.labels]), conflicts


def class_weights(mask: LabelMask, num_categories: int | None = None) -> np.ndarray:
    """Per-category pixel fraction over all labeled pixels; sums to 1."""
    labeled = mask.labels[mask.labels >= 0]
    if labeled.size == 0:
        raise ValueError("mask has no labeled pixels")
    n = num_categories if num_categories is not None else int(labeled.max()) + 1
    counts = np.bincount(labeled, minlength=n).astype(np.float64)
    return counts / labeled.size
