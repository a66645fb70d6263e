"""Ground class-level explanation knowledge as per-sample training patches.

For every training sample of a queried class pair and every mentioned
segment, the segment's box is cropped from the sample's feature grid and
bilinearly resized back to full grid resolution. One patch per (sample,
segment); samples lacking the box annotation are skipped and recorded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownSegment
from .feature_store import BoundingBox, DatasetManifest
from .parsing import ParsedExplanation


def crop_resize(amap: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Crop the box from an (H, W, d) grid and resize back to H x W.

    The box maps to cell rows floor(y0*H)..ceil(y1*H)-1 and cols
    floor(x0*W)..ceil(x1*W)-1, clamped to at least one cell each way.
    Resampling is bilinear with endpoint mapping src = t*(n-1)/(m-1);
    single-cell sources broadcast.
    """
    h, w, _ = amap.shape
    r0 = min(int(np.floor(box.y0 * h)), h - 1)
    r1 = min(max(int(np.ceil(box.y1 * h)) - 1, r0), h - 1)
    c0 = min(int(np.floor(box.x0 * w)), w - 1)
    c1 = min(max(int(np.ceil(box.x1 * w)) - 1, c0), w - 1)
    sub = np.asarray(amap, dtype=np.float64)[r0:r1 + 1, c0:c1 + 1, :]
    return _resize_bilinear(sub, h, w)


def _axis_positions(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and interpolation weights for one axis."""
    if n_src == 1 or n_dst == 1:
        lo = np.zeros(n_dst, dtype=int)
        return lo, lo.copy(), np.zeros(n_dst)
    src = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    lo = np.floor(src).astype(int)
    lo = np.minimum(lo, n_src - 2)
    frac = src - lo
    return lo, lo + 1, frac


def _resize_bilinear(sub: np.ndarray, h: int, w: int) -> np.ndarray:
    nr, nc, d = sub.shape
    if nr == h and nc == w:
        return sub.copy()
    r_lo, r_hi, r_frac = _axis_positions(nr, h)
    c_lo, c_hi, c_frac = _axis_positions(nc, w)
    rf = r_frac[:, None, None]
    cf = c_frac[None, :, None]
    top = sub[r_lo][:, c_lo] * (1 - cf) + sub[r_lo][:, c_hi] * cf
    bot = sub[r_hi][:, c_lo] * (1 - cf) + sub[r_hi][:, c_hi] * cf
    return top * (1 - rf) + bot * rf


@dataclass(frozen=True)
class PatchSample:
    source_sample_id: int
    segment_id: int
    map: np.ndarray
    fine_label: int


@dataclass(frozen=True)
class GroundingReport:
    pair: tuple[int, int]
    segments: tuple[int, ...]
    patches_created: int
    samples_skipped: tuple[tuple[int, int], ...]


def ground_explanation(parsed: ParsedExplanation, dataset: DatasetManifest,
                       split: str = "train") -> tuple[list[PatchSample], GroundingReport]:
    """Crop every mentioned segment from every sample of the pair's split.

    Output order is (sample_id, segment position in the mention order).
    A segment id missing from the catalog is a contract violation; a
    sample missing the box annotation is skipped and recorded.
    """
    catalog_ids = {seg.segment_id for seg in dataset.segment_catalog}
    for seg_id in parsed.segments:
        if seg_id not in catalog_ids:
            raise UnknownSegment(f"segment {seg_id} is not in the dataset catalog")

    records = [s for s in dataset.samples_of(split) if s.fine_label in parsed.pair]
    records.sort(key=lambda s: s.sample_id)

    patches: list[PatchSample] = []
    skipped: list[tuple[int, int]] = []
    for record in records:
        amap = None
        for seg_id in parsed.segments:
            box = record.segment_boxes.get(seg_id)
            if box is None:
                skipped.append((record.sample_id, seg_id))
                continue
            if amap is None:
                amap = dataset.load_activation(record)
            patches.append(PatchSample(
                source_sample_id=record.sample_id,
                segment_id=seg_id,
                map=crop_resize(amap, box),
                fine_label=record.fine_label,
            ))
    report = GroundingReport(
        pair=parsed.pair,
        segments=parsed.segments,
        patches_created=len(patches),
        samples_skipped=tuple(skipped),
    )
    return patches, report


def substitute_random_segments(parsed: ParsedExplanation, dataset: DatasetManifest,
                               seed) -> ParsedExplanation:
    """Random-grounding ablation: swap each parsed segment for a seeded
    uniform draw from the catalog excluding all parsed ones."""
    parsed_set = set(parsed.segments)
    pool = sorted(s.segment_id for s in dataset.segment_catalog
                  if s.segment_id not in parsed_set)
    if not pool:
        return parsed
    rng = np.random.default_rng(seed)
    k = min(len(parsed.segments), len(pool))
    chosen = tuple(int(s) for s in rng.choice(pool, size=k, replace=False))
    names = {s.segment_id: s.canonical_name for s in dataset.segment_catalog}
    return ParsedExplanation(
        pair=parsed.pair,
        segments=chosen,
        raw_text=parsed.raw_text,
        segment_names=tuple(names[s] for s in chosen),
    )
