"""Synthetic writers, marks, and whole ballots with ground-truth annotations.

A writer is a point in a continuous style space (stroke width, slant,
fill density, wobble, overshoot).  A mark is a bubble outline filled with
roughly parallel jittered strokes drawn from that style; per-instance
variation (stroke phases, lattice offset, width draws) comes from a
separate instance seed, so the same writer produces coherent but not
identical marks.

Everything is a pure function of its explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import MarkImage
from .rng import check_seed, rng_from

MARK_SIZE = 64

# Entropy-domain tags so writer sampling, mark rendering, and ballot layout
# never share a stream even when the user passes the same seed everywhere.
_DOMAIN_WRITER = 101
_DOMAIN_MARK = 202
_DOMAIN_BALLOT = 303
_DOMAIN_TRAITS = 404

_OUTLINE_INK = 0.22
_OUTLINE_RADIUS_FRAC = 0.38
_OUTLINE_HALF_WIDTH = 0.8
_EDGE_SOFTNESS = 0.3  # transition band width in pixels; keeps masks crisp


@dataclass(frozen=True)
class WriterStyle:
    writer_id: int
    stroke_width_mean: float  # pixels > 0
    stroke_width_jitter: float  # pixels >= 0
    slant: float  # radians in [-0.6, 0.6]
    fill_density: float  # fraction in [0.3, 1.0]
    wobble_amplitude: float  # pixels >= 0
    wobble_frequency: float  # cycles per stroke > 0
    overshoot: float  # fraction in [0, 0.3]
    seed: int

    def __post_init__(self):
        if self.stroke_width_mean <= 0:
            raise ValueError("stroke_width_mean must be > 0")
        if self.stroke_width_jitter < 0:
            raise ValueError("stroke_width_jitter must be >= 0")
        if not -0.6 <= self.slant <= 0.6:
            raise ValueError("slant must lie in [-0.6, 0.6]")
        if not 0.3 <= self.fill_density <= 1.0:
            raise ValueError("fill_density must lie in [0.3, 1.0]")
        if self.wobble_amplitude < 0:
            raise ValueError("wobble_amplitude must be >= 0")
        if self.wobble_frequency <= 0:
            raise ValueError("wobble_frequency must be > 0")
        if not 0.0 <= self.overshoot <= 0.3:
            raise ValueError("overshoot must lie in [0, 0.3]")


@dataclass(frozen=True)
class BubbleAnnotation:
    bbox: tuple  # (x0, y0, x1, y1), exclusive upper bounds
    writer_id: int
    mark_id: str
    mask: np.ndarray  # full-page bool raster of the inked region


@dataclass(frozen=True)
class SyntheticBallot:
    image: np.ndarray  # full-page grayscale, float64 in [0, 1]
    bubbles: tuple  # BubbleAnnotation per placed mark


def sample_writer(writer_id: int, seed: int) -> WriterStyle:
    """Draw one writer's style; deterministic in (writer_id, seed)."""
    writer_id = check_seed(writer_id, "writer_id")
    seed = check_seed(seed)
    rng = rng_from(_DOMAIN_WRITER, seed, writer_id)
    return WriterStyle(
        writer_id=writer_id,
        stroke_width_mean=float(rng.uniform(2.0, 4.5)),
        stroke_width_jitter=float(rng.uniform(0.0, 0.3)),
        slant=float(rng.uniform(-0.6, 0.6)),
        fill_density=float(rng.uniform(0.3, 1.0)),
        wobble_amplitude=float(rng.uniform(0.0, 1.1)),
        wobble_frequency=float(rng.uniform(0.8, 3.0)),
        overshoot=float(rng.uniform(0.0, 0.3)),
        seed=int(rng.integers(0, 2**63 - 1)),
    )


def _stamp_polyline(canvas: np.ndarray, pts: np.ndarray, half_width: float, ink: float) -> None:
    """Darken pixels within half_width of the polyline (soft-edged)."""
    h, w = canvas.shape
    pad = half_width + _EDGE_SOFTNESS + 1.0
    x0 = max(0, int(np.floor(pts[:, 0].min() - pad)))
    x1 = min(w, int(np.ceil(pts[:, 0].max() + pad)) + 1)
    y0 = max(0, int(np.floor(pts[:, 1].min() - pad)))
    y1 = min(h, int(np.ceil(pts[:, 1].max() + pad)) + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    a = pts[:-1][None, :, :]
    b = pts[1:][None, :, :]
    ab = b - a
    denom = np.maximum((ab**2).sum(axis=2), 1e-12)
    t = np.clip(((pix[:, None, :] - a) * ab).sum(axis=2) / denom, 0.0, 1.0)
    proj = a + t[:, :, None] * ab
    dist = np.sqrt(((pix[:, None, :] - proj) ** 2).sum(axis=2)).min(axis=1)

    cover = np.clip((half_width + _EDGE_SOFTNESS - dist) / _EDGE_SOFTNESS, 0.0, 1.0)
    window = canvas[y0:y1, x0:x1].ravel()
    np.minimum(window, 1.0 - cover * (1.0 - ink), out=window)
    canvas[y0:y1, x0:x1] = window.reshape(y1 - y0, x1 - x0)


def _stamp_ring(canvas: np.ndarray, cx: float, cy: float, radius: float,
                half_width: float, ink: float) -> None:
    """Darken an annulus |r - radius| < half_width around (cx, cy)."""
    h, w = canvas.shape
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.abs(np.hypot(xs - cx, ys - cy) - radius)
    cover = np.clip((half_width + _EDGE_SOFTNESS - d) / _EDGE_SOFTNESS, 0.0, 1.0)
    np.minimum(canvas, 1.0 - cover * (1.0 - ink), out=canvas)


def render_mark(style: WriterStyle, instance_seed: int, size: int = MARK_SIZE) -> MarkImage:
    """Render one filled-bubble mark in the given style.

    The bubble outline (the printed target the voter fills) is part of the
    image; the fill is a lattice of parallel strokes at the style's slant,
    with chord length, spacing, and wobble governed by the style and the
    per-instance stream.  The output is passed through the same
    mask-crop-normalize path deployment crops take, so training marks and
    segmented marks share one geometry.
    """
    instance_seed = check_seed(instance_seed, "instance_seed")
    rng = rng_from(_DOMAIN_MARK, style.seed, instance_seed)
    # Writer-stable traits (pen tone, preferred lattice anchor) come from the
    # style's own seed so they persist across instances of the same writer.
    traits = rng_from(_DOMAIN_TRAITS, style.seed)
    ink_base = 0.10 + 0.12 * float(traits.uniform())
    lattice_phase = float(traits.uniform(-0.5, 0.5))

    # Work on a canvas large enough that the crop margin never clamps, so
    # rendered marks and page-segmented crops share identical proportions.
    raw_size = int(np.ceil(size * 1.4))
    canvas = np.ones((raw_size, raw_size), dtype=np.float64)

    cx = cy = (raw_size - 1) / 2.0
    radius = size * _OUTLINE_RADIUS_FRAC
    _stamp_ring(canvas, cx, cy, radius, _OUTLINE_HALF_WIDTH, _OUTLINE_INK)

    # Stroke direction and its perpendicular; strokes are chords of the bubble.
    ux, uy = np.cos(style.slant), np.sin(style.slant)
    px, py = -uy, ux
    spacing = 0.9 * style.stroke_width_mean / style.fill_density
    lattice_shift = (lattice_phase + 0.3 * float(rng.uniform(-0.5, 0.5))) * spacing

    offsets = np.arange(-radius + spacing / 2.0, radius - spacing / 4.0, spacing) + lattice_shift
    for offset in offsets:
        if abs(offset) >= radius - 0.5:
            continue
        chord = np.sqrt(radius**2 - offset**2)
        half_len = chord * (1.0 + style.overshoot)
        n_pts = max(5, int(np.ceil(half_len)))
        ts = np.linspace(-half_len, half_len, n_pts)

        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        wobble = style.wobble_amplitude * np.sin(
            2.0 * np.pi * style.wobble_frequency * (ts / (2.0 * half_len) + 0.5) + phase
        )
        wobble = wobble + rng.normal(0.0, 0.12, size=n_pts)

        base_x = cx + offset * px
        base_y = cy + offset * py
        pts = np.stack(
            [base_x + ts * ux + wobble * px, base_y + ts * uy + wobble * py], axis=1
        )
        width = max(0.7, float(rng.normal(style.stroke_width_mean, style.stroke_width_jitter)))
        ink = ink_base + float(rng.uniform(-0.03, 0.03))
        _stamp_polyline(canvas, pts, width / 2.0, ink)

    from .segmentation import normalize_crop

    mask = canvas < 0.5  # the outline ring guarantees a non-empty mask
    ys, xs = np.nonzero(mask)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    normalized = normalize_crop(canvas, mask, bbox, out_size=size)
    pixels = normalized.pixels.copy()
    # Snap resampling fringes to paper: with no intensities between the ink
    # cluster and the paper cluster, any sensible global threshold recovers
    # exactly the annotated mask.
    pixels[pixels >= 0.5] = 1.0
    return MarkImage(pixels=pixels,
                     mark_id=f"w{style.writer_id:03d}_i{instance_seed}", ballot_id="")


def generate_dataset(num_writers: int, marks_per_writer: int, seed: int,
                     size: int = MARK_SIZE, writer_id_base: int = 0):
    """num_writers x marks_per_writer marks, grouped by writer.

    Returns a list of (writer_id, [MarkImage, ...]); deterministic in
    (num_writers, marks_per_writer, seed, writer_id_base).
    """
    if num_writers < 2:
        raise ValueError(f"num_writers must be >= 2, got {num_writers}")
    if marks_per_writer < 2:
        raise ValueError(f"marks_per_writer must be >= 2, got {marks_per_writer}")
    seed = check_seed(seed)
    dataset = []
    for w in range(num_writers):
        writer_id = writer_id_base + w
        style = sample_writer(writer_id, seed)
        marks = []
        for i in range(marks_per_writer):
            mark = render_mark(style, instance_seed=i, size=size)
            marks.append(
                MarkImage(
                    pixels=mark.pixels,
                    mark_id=f"w{writer_id:03d}_m{i:03d}",
                    ballot_id=f"w{writer_id:03d}",
                )
            )
        dataset.append((writer_id, marks))
    return dataset


_CELL_PAD = 8
_PAGE_MARGIN = 24


def render_ballot(styles, rows: int, cols: int, seed: int,
                  mark_size: int = MARK_SIZE, ballot_id: str = "ballot") -> SyntheticBallot:
    """A page with a rows x cols grid of bubbles, a subset filled.

    Each style fills one bubble (cells chosen from the seed stream); the
    rest stay empty outlines.  Ground truth records each filled bubble's
    tight bbox and full-page ink mask.
    """
    styles = list(styles)
    if rows * cols < len(styles):
        raise ValueError(
            f"grid {rows}x{cols} cannot hold {len(styles)} marks"
        )
    seed = check_seed(seed)
    rng = rng_from(_DOMAIN_BALLOT, seed, rows, cols, len(styles))

    pitch = mark_size + 2 * _CELL_PAD
    height = 2 * _PAGE_MARGIN + rows * pitch
    width = 2 * _PAGE_MARGIN + cols * pitch

    # Paper texture: everything stays at or above 0.85.
    page = 1.0 - rng.uniform(0.0, 0.05, size=(height, width))
    speckle = rng.random(size=(height, width)) < 0.004
    page[speckle] -= rng.uniform(0.02, 0.10, size=int(speckle.sum()))
    np.clip(page, 0.85, 1.0, out=page)

    cells = [(r, c) for r in range(rows) for c in range(cols)]
    chosen = rng.choice(len(cells), size=len(styles), replace=False)

    filled = {int(i) for i in chosen}
    radius = mark_size * _OUTLINE_RADIUS_FRAC
    for idx, (r, c) in enumerate(cells):
        if idx in filled:
            continue
        cx = _PAGE_MARGIN + c * pitch + pitch / 2.0 - 0.5
        cy = _PAGE_MARGIN + r * pitch + pitch / 2.0 - 0.5
        _stamp_ring(page, cx, cy, radius, _OUTLINE_HALF_WIDTH, _OUTLINE_INK)

    bubbles = []
    for style, cell_idx in zip(styles, chosen):
        r, c = cells[int(cell_idx)]
        jx, jy = rng.integers(-3, 4, size=2)
        x_org = _PAGE_MARGIN + c * pitch + _CELL_PAD + int(jx)
        y_org = _PAGE_MARGIN + r * pitch + _CELL_PAD + int(jy)
        tile = render_mark(style, instance_seed=int(rng.integers(0, 2**31)), size=mark_size)

        region = page[y_org : y_org + mark_size, x_org : x_org + mark_size]
        np.minimum(region, tile.pixels, out=region)

        tile_mask = tile.pixels < 0.5
        mask = np.zeros((height, width), dtype=bool)
        mask[y_org : y_org + mark_size, x_org : x_org + mark_size] = tile_mask
        ys, xs = np.nonzero(mask)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        mark_id = f"{ballot_id}_m{len(bubbles)}"
        bubbles.append(
            BubbleAnnotation(bbox=bbox, writer_id=style.writer_id, mark_id=mark_id, mask=mask)
        )

    return SyntheticBallot(image=page, bubbles=tuple(bubbles))
