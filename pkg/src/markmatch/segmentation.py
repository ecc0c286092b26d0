"""Prompt-based mark extraction: point or box prompts on a ballot photo
produce a binary mask and an encoder-ready crop.

The extraction backend is classical (Otsu binarization + 8-connected
components); `segment` is the stable entry point, so a learned segmenter
can replace the backend without touching callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError, NoMarkFoundError
from .images import MarkImage

MIN_COMPONENT_PIXELS = 10
POINT_SNAP_RADIUS = 5.0
CROP_SIZE = 64
_BBOX_MARGIN = 0.10


@dataclass(frozen=True)
class SegmentPrompt:
    kind: str  # "point" | "box"
    point: tuple | None = None  # (x, y)
    box: tuple | None = None  # (x0, y0, x1, y1)

    def __post_init__(self):
        if self.kind == "point":
            if self.point is None or len(self.point) != 2:
                raise ValueError("point prompt needs (x, y)")
        elif self.kind == "box":
            if self.box is None or len(self.box) != 4:
                raise ValueError("box prompt needs (x0, y0, x1, y1)")
            x0, y0, x1, y1 = self.box
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"degenerate box {self.box}")
        else:
            raise ValueError(f"unknown prompt kind {self.kind!r}")


@dataclass(frozen=True)
class ComponentStats:
    label: int
    pixel_count: int
    bbox: tuple  # (x0, y0, x1, y1), exclusive upper bounds


@dataclass(frozen=True)
class MaskSegment:
    mask: np.ndarray  # full-image bool raster
    bbox: tuple  # tight bbox of the mask
    crop: MarkImage
    source_ballot: str = ""


def binarize(image: np.ndarray) -> np.ndarray:
    """Ink mask by Otsu's criterion over a 256-bin histogram.

    Pixels strictly below the threshold are ink.  A single-valued histogram
    yields an all-background mask.  Plateaus of the between-class variance
    (empty histogram gaps) resolve to their middle bin, which places the
    threshold midway between well-separated ink and paper modes.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected non-empty 2-D image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0 or not np.all(np.isfinite(image)):
        raise ValueError("intensities must lie in [0, 1]")

    bins = np.minimum((image * 256.0).astype(np.int64), 255)
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        return np.zeros_like(image, dtype=bool)

    total = hist.sum()
    prob = hist / total
    omega = np.cumsum(prob)  # class-0 weight for threshold t (bins 0..t)
    mu = np.cumsum(prob * np.arange(256))
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        var_between = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    var_between = np.nan_to_num(var_between[:-1], nan=-1.0, posinf=-1.0)

    best = var_between.max()
    plateau = np.nonzero(var_between == best)[0]
    t = int((plateau[0] + plateau[-1]) // 2)
    threshold = (t + 1) / 256.0
    return image < threshold


def connected_components(binary: np.ndarray):
    """8-connected labeling via run-merging; labels are 1..K in scan order.

    Returns (labels raster, [ComponentStats, ...]).
    """
    binary = np.asarray(binary, dtype=bool)
    if binary.ndim != 2:
        raise ValueError(f"expected 2-D binary raster, got shape {binary.shape}")
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=np.int32)

    # Decompose each row into runs of consecutive ink pixels.
    runs = []  # (row, c0, c1) with c1 exclusive
    row_runs: list[list[int]] = [[] for _ in range(h)]
    for r in range(h):
        row = binary[r]
        if not row.any():
            continue
        diff = np.diff(row.astype(np.int8))
        starts = list(np.nonzero(diff == 1)[0] + 1)
        ends = list(np.nonzero(diff == -1)[0] + 1)
        if row[0]:
            starts.insert(0, 0)
        if row[-1]:
            ends.append(w)
        for c0, c1 in zip(starts, ends):
            row_runs[r].append(len(runs))
            runs.append((r, int(c0), int(c1)))

    parent = list(range(len(runs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for r in range(1, h):
        for ri in row_runs[r]:
            _, c0, c1 = runs[ri]
            for rj in row_runs[r - 1]:
                _, p0, p1 = runs[rj]
                if c0 <= p1 and p0 <= c1:  # touching or diagonal (8-connectivity)
                    union(ri, rj)

    # Dense labels in order of first appearance.
    label_of_root: dict[int, int] = {}
    stats: dict[int, list] = {}
    for idx, (r, c0, c1) in enumerate(runs):
        root = find(idx)
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root) + 1
        lbl = label_of_root[root]
        labels[r, c0:c1] = lbl
        if lbl not in stats:
            stats[lbl] = [0, c0, r, c1, r + 1]  # count, x0, y0, x1, y1
        s = stats[lbl]
        s[0] += c1 - c0
        s[1] = min(s[1], c0)
        s[3] = max(s[3], c1)
        s[4] = r + 1

    out = [
        ComponentStats(label=lbl, pixel_count=s[0], bbox=(s[1], s[2], s[3], s[4]))
        for lbl, s in sorted(stats.items())
    ]
    return labels, out


def _qualifying(stats) -> list[ComponentStats]:
    return [s for s in stats if s.pixel_count >= MIN_COMPONENT_PIXELS]


def segment(image: np.ndarray, prompt: SegmentPrompt, source_ballot: str = "") -> MaskSegment:
    """Extract the mark selected by a point or box prompt.

    Point: the ink component containing the point, or the nearest component
    within the snap radius.  Box: the union of components with a pixel
    majority inside the box.  Components below the noise floor are ignored.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    ink = binarize(image)
    labels, stats = connected_components(ink)
    candidates = _qualifying(stats)

    if prompt.kind == "point":
        x, y = prompt.point
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"point ({x}, {y}) outside image {w}x{h}")
        chosen = _component_at_point(labels, candidates, float(x), float(y))
        if chosen is None:
            raise NoMarkFoundError(f"no ink component within {POINT_SNAP_RADIUS} px of ({x}, {y})")
        selected = [chosen]
    else:
        x0, y0, x1, y1 = prompt.box
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"box {prompt.box} outside image {w}x{h}")
        selected = []
        for s in candidates:
            ys, xs = np.nonzero(labels == s.label)
            inside = (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)
            if inside.sum() > 0.5 * s.pixel_count:
                selected.append(s)
        if not selected:
            raise NoMarkFoundError(f"no ink component has a pixel majority inside {prompt.box}")

    mask = np.isin(labels, [s.label for s in selected])
    ys, xs = np.nonzero(mask)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    crop = normalize_crop(image, mask, bbox)
    return MaskSegment(mask=mask, bbox=bbox, crop=crop, source_ballot=source_ballot)


def _component_at_point(labels, candidates, x, y):
    lbl = int(labels[int(round(y)), int(round(x))])
    by_label = {s.label: s for s in candidates}
    if lbl in by_label:
        return by_label[lbl]
    best, best_dist = None, POINT_SNAP_RADIUS
    for s in candidates:
        bx0, by0, bx1, by1 = s.bbox
        if (
            x < bx0 - POINT_SNAP_RADIUS
            or x >= bx1 + POINT_SNAP_RADIUS
            or y < by0 - POINT_SNAP_RADIUS
            or y >= by1 + POINT_SNAP_RADIUS
        ):
            continue
        ys, xs = np.nonzero(labels == s.label)
        dist = float(np.min(np.hypot(xs - x, ys - y)))
        if dist <= best_dist:
            best, best_dist = s, dist
    return best


def _bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = image.shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = image[np.ix_(y0, x0)] * (1 - fx) + image[np.ix_(y0, x1)] * fx
    bottom = image[np.ix_(y1, x0)] * (1 - fx) + image[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def normalize_crop(image: np.ndarray, mask: np.ndarray, bbox, out_size: int = CROP_SIZE) -> MarkImage:
    """Masked, white-padded, aspect-preserving crop at the encoder input size."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    x0, y0, x1, y1 = bbox
    h, w = image.shape
    mx = int(round(_BBOX_MARGIN * (x1 - x0)))
    my = int(round(_BBOX_MARGIN * (y1 - y0)))
    x0e, x1e = max(0, x0 - mx), min(w, x1 + mx)
    y0e, y1e = max(0, y0 - my), min(h, y1 + my)

    window = np.where(mask[y0e:y1e, x0e:x1e], image[y0e:y1e, x0e:x1e], 1.0)

    # White-pad to square so resizing preserves aspect ratio.
    side = max(window.shape)
    square = np.ones((side, side), dtype=np.float64)
    oy = (side - window.shape[0]) // 2
    ox = (side - window.shape[1]) // 2
    square[oy : oy + window.shape[0], ox : ox + window.shape[1]] = window

    resized = np.clip(_bilinear_resize(square, out_size, out_size), 0.0, 1.0)
    return MarkImage(pixels=resized)


# ---------------------------------------------------------------------------
# Mask serialization: row-major run lengths, background first.
# ---------------------------------------------------------------------------


def mask_to_rle(mask: np.ndarray) -> str:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected 2-D mask, got shape {mask.shape}")
    h, w = mask.shape
    flat = mask.ravel()
    tokens = [str(w), str(h)]
    changes = np.nonzero(np.diff(flat))[0] + 1
    boundaries = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(boundaries)
    if flat.size and flat[0]:
        tokens.append("0")  # leading zero-length background run
    tokens.extend(str(int(r)) for r in runs)
    return " ".join(tokens)


def rle_to_mask(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 2:
        raise FileFormatError("RLE needs at least width and height")
    try:
        w, h = int(tokens[0]), int(tokens[1])
        runs = [int(t) for t in tokens[2:]]
    except ValueError as exc:
        raise FileFormatError(f"bad RLE token: {exc}") from exc
    if w < 1 or h < 1 or any(r < 0 for r in runs):
        raise FileFormatError("invalid RLE dimensions or negative run")
    if sum(runs) != w * h:
        raise FileFormatError(f"RLE runs sum to {sum(runs)}, expected {w * h}")
    flat = np.zeros(w * h, dtype=bool)
    pos, value = 0, False
    for r in runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    return flat.reshape(h, w)
