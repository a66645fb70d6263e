"""Dataset ingestion, on-disk tensor/manifest formats, and synthetic data.

A dataset lives in one directory:

    <root>/manifest.json                 UTF-8 JSON manifest
    <root>/tensors/<sample_id>.f32       raw little-endian float32, H*W*d values
    <root>/oracle_explanations.jsonl     synthetic datasets only

Activation maps are H x W x d grids stored row-major (H outer, W middle,
d inner). All in-memory math uses float64; float32 is storage only.

The synthetic generator plants one discriminating segment per confusable
class pair: both classes share a base prototype everywhere except inside
that segment's box, where per-class offsets of per-channel magnitude
``delta`` (opposite signs, a seeded per-pair sign pattern) are added.
I.i.d. Gaussian noise of scale ``sigma`` is added on top of everything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    InvalidParams,
    MalformedManifest,
    MissingTensor,
    NonFiniteValue,
)

SPLITS = ("train", "test", "pool")


@dataclass(frozen=True)
class Grid:
    h: int
    w: int
    d: int

    @property
    def cells(self) -> int:
        return self.h * self.w

    @property
    def size(self) -> int:
        return self.h * self.w * self.d


@dataclass(frozen=True)
class BoundingBox:
    """Normalized image coordinates, x across columns, y across rows."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise MalformedManifest(f"degenerate bounding box {self}")

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Segment:
    segment_id: int
    canonical_name: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class FineClass:
    id: int
    name: str
    coarse_group: int


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    fine_label: int
    tensor_ref: str
    split: str
    segment_boxes: dict[int, BoundingBox] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    name: str
    grid: Grid
    fine_classes: list[FineClass]
    segment_catalog: list[Segment]
    samples: list[SampleRecord]
    root: Path

    @property
    def num_classes(self) -> int:
        return len(self.fine_classes)

    def samples_of(self, split: str, fine_label: int | None = None) -> list[SampleRecord]:
        out = [s for s in self.samples if s.split == split]
        if fine_label is not None:
            out = [s for s in out if s.fine_label == fine_label]
        return out

    def class_name(self, fine: int) -> str:
        return self.fine_classes[fine].name

    def class_by_name(self, name: str) -> FineClass:
        for fc in self.fine_classes:
            if fc.name == name:
                return fc
        raise KeyError(name)

    def segment_by_id(self, segment_id: int) -> Segment:
        for seg in self.segment_catalog:
            if seg.segment_id == segment_id:
                return seg
        raise KeyError(segment_id)

    def sample_by_id(self, sample_id: int) -> SampleRecord:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise KeyError(sample_id)

    def load_activation(self, record: SampleRecord) -> np.ndarray:
        return load_activation(self.root, record, self.grid)


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise MalformedManifest(f"{ctx}: missing field '{key}'")
    return obj[key]


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and eagerly validate a dataset manifest.

    Every invariant is checked up front, including the existence, byte
    length, and finiteness of every referenced tensor file.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise MalformedManifest(f"no manifest at {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifest(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedManifest(f"{path}: manifest must be a JSON object")

    g = _require(raw, "grid", "manifest")
    try:
        grid = Grid(int(g["h"]), int(g["w"]), int(g["d"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifest(f"bad grid spec {g!r}") from exc
    if grid.h < 1 or grid.w < 1 or grid.d < 1:
        raise MalformedManifest(f"grid dimensions must be positive, got {grid}")

    classes = []
    for entry in _require(raw, "fine_classes", "manifest"):
        try:
            classes.append(FineClass(int(entry["id"]), str(entry["name"]),
                                     int(entry["coarse_group"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest(f"bad fine class entry {entry!r}") from exc
    ids = sorted(c.id for c in classes)
    if not classes or ids != list(range(len(classes))):
        raise MalformedManifest("fine-class ids must be dense 0..C-1")
    classes.sort(key=lambda c: c.id)
    if len({c.name for c in classes}) != len(classes):
        raise MalformedManifest("fine-class names must be unique")

    catalog = []
    seen_surfaces: set[str] = set()
    for entry in _require(raw, "segment_catalog", "manifest"):
        try:
            seg = Segment(int(entry["segment_id"]), str(entry["canonical_name"]),
                          tuple(str(s) for s in entry.get("synonyms", [])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest(f"bad segment entry {entry!r}") from exc
        for surface in (seg.canonical_name, *seg.synonyms):
            if surface != surface.lower():
                raise MalformedManifest(f"segment surface form '{surface}' is not lowercase")
            if surface in seen_surfaces:
                raise MalformedManifest(f"duplicate segment surface form '{surface}'")
            seen_surfaces.add(surface)
        catalog.append(seg)
    seg_ids = {s.segment_id for s in catalog}
    if len(seg_ids) != len(catalog):
        raise MalformedManifest("segment ids must be unique")

    samples = []
    seen_samples: set[int] = set()
    for entry in _require(raw, "samples", "manifest"):
        ctx = f"sample {entry.get('sample_id')!r}"
        sid = int(_require(entry, "sample_id", ctx))
        if sid in seen_samples:
            raise MalformedManifest(f"duplicate sample id {sid}")
        seen_samples.add(sid)
        label = int(_require(entry, "fine_label", ctx))
        if not 0 <= label < len(classes):
            raise MalformedManifest(f"{ctx}: fine_label {label} out of range")
        split = str(_require(entry, "split", ctx))
        if split not in SPLITS:
            raise MalformedManifest(f"{ctx}: unknown split '{split}'")
        boxes: dict[int, BoundingBox] = {}
        for key, coords in entry.get("segment_boxes", {}).items():
            seg_id = int(key)
            if seg_id not in seg_ids:
                raise MalformedManifest(f"{ctx}: box for unknown segment {seg_id}")
            if not (isinstance(coords, (list, tuple)) and len(coords) == 4):
                raise MalformedManifest(f"{ctx}: box must be [x0, y0, x1, y1]")
            boxes[seg_id] = BoundingBox(*(float(v) for v in coords))
        samples.append(SampleRecord(sid, label, str(_require(entry, "tensor_ref", ctx)),
                                    split, boxes))

    manifest = DatasetManifest(
        name=str(raw.get("name", path.parent.name)),
        grid=grid,
        fine_classes=classes,
        segment_catalog=catalog,
        samples=samples,
        root=path.parent,
    )

    for fc in classes:
        if not manifest.samples_of("train", fc.id):
            raise MalformedManifest(f"class {fc.id} has no train samples")
        if not manifest.samples_of("test", fc.id):
            raise MalformedManifest(f"class {fc.id} has no test samples")

    # Eager tensor validation: existence, exact length, finiteness.
    for record in samples:
        manifest.load_activation(record)
    return manifest


def load_activation(root: str | Path, record: SampleRecord, grid: Grid) -> np.ndarray:
    """Load one activation map as a float64 (H, W, d) array."""
    path = Path(root) / record.tensor_ref
    if not path.is_file():
        raise MissingTensor(f"sample {record.sample_id}: tensor {path} does not exist")
    data = np.fromfile(path, dtype="<f4")
    if data.size != grid.size:
        raise DimMismatch(
            f"sample {record.sample_id}: tensor holds {data.size} values, "
            f"expected {grid.h}x{grid.w}x{grid.d}={grid.size}"
        )
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"sample {record.sample_id}: tensor contains non-finite values")
    return data.astype(np.float64).reshape(grid.h, grid.w, grid.d)


# -- synthetic data -----------------------------------------------------------

@dataclass(frozen=True)
class SynthSegment:
    name: str
    box: BoundingBox
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConfusablePair:
    class_a: int
    class_b: int
    segment: str


def _default_segments() -> tuple[SynthSegment, ...]:
    # Single-cell boxes for the five planted segments keep the pooled
    # footprint of the class offset small; the rest get 2x2 boxes.
    cell = 1.0 / 8.0
    return (
        SynthSegment("bill", BoundingBox(0 * cell, 0 * cell, 1 * cell, 1 * cell), ("beak",)),
        SynthSegment("wing", BoundingBox(2 * cell, 2 * cell, 3 * cell, 3 * cell), ("wings",)),
        SynthSegment("tail", BoundingBox(4 * cell, 4 * cell, 5 * cell, 5 * cell)),
        SynthSegment("breast", BoundingBox(6 * cell, 6 * cell, 7 * cell, 7 * cell), ("chest",)),
        SynthSegment("crown", BoundingBox(6 * cell, 0 * cell, 7 * cell, 1 * cell), ("cap",)),
        SynthSegment("eye", BoundingBox(2 * cell, 0 * cell, 4 * cell, 2 * cell), ("eyes",)),
        SynthSegment("belly", BoundingBox(0 * cell, 4 * cell, 2 * cell, 6 * cell)),
        SynthSegment("back", BoundingBox(2 * cell, 6 * cell, 4 * cell, 8 * cell)),
    )


def _default_pairs(n: int) -> tuple[ConfusablePair, ...]:
    names = ("bill", "wing", "tail", "breast", "crown", "eye", "belly", "back")
    return tuple(ConfusablePair(2 * i, 2 * i + 1, names[i % len(names)]) for i in range(n))


@dataclass(frozen=True)
class SynthParams:
    classes: int = 10
    coarse_groups: int = 5
    height: int = 8
    width: int = 8
    channels: int = 16
    n_train: int = 15
    n_test: int = 30
    n_pool: int = 15
    delta: float = 2.0
    sigma: float = 1.0
    base_scale: float = 3.0
    segments: tuple[SynthSegment, ...] = field(default_factory=_default_segments)
    confusable_pairs: tuple[ConfusablePair, ...] = field(
        default_factory=lambda: _default_pairs(5))

    @property
    def grid(self) -> Grid:
        return Grid(self.height, self.width, self.channels)


def _box_cells(box: BoundingBox, grid: Grid) -> tuple[slice, slice]:
    r0 = min(int(np.floor(box.y0 * grid.h)), grid.h - 1)
    r1 = max(int(np.ceil(box.y1 * grid.h)) - 1, r0)
    c0 = min(int(np.floor(box.x0 * grid.w)), grid.w - 1)
    c1 = max(int(np.ceil(box.x1 * grid.w)) - 1, c0)
    return slice(r0, min(r1, grid.h - 1) + 1), slice(c0, min(c1, grid.w - 1) + 1)


def _validate_synth(params: SynthParams):
    p = params
    if p.classes < 2:
        raise InvalidParams(f"need at least 2 classes, got {p.classes}")
    if not 1 <= p.coarse_groups <= p.classes:
        raise InvalidParams(f"coarse_groups must be in [1, {p.classes}]")
    if min(p.height, p.width, p.channels) < 1:
        raise InvalidParams("grid dimensions must be positive")
    if p.n_train < 2:
        raise InvalidParams("need n_train >= 2 to fit class profiles")
    if p.n_test < 1:
        raise InvalidParams("need n_test >= 1")
    if p.n_pool < 0:
        raise InvalidParams("n_pool must be non-negative")
    if p.delta <= 0 or p.sigma <= 0:
        raise InvalidParams("delta and sigma must be positive")
    names = [s.name for s in p.segments]
    surfaces = [n for s in p.segments for n in (s.name, *s.synonyms)]
    if len(set(surfaces)) != len(surfaces):
        raise InvalidParams("segment surface forms must be unique")
    if any(n != n.lower() for n in surfaces):
        raise InvalidParams("segment surface forms must be lowercase")
    for seg in p.segments:
        for v, n in ((seg.box.x0, p.width), (seg.box.x1, p.width),
                     (seg.box.y0, p.height), (seg.box.y1, p.height)):
            if abs(v * n - round(v * n)) > 1e-9:
                raise InvalidParams(f"segment '{seg.name}' box is not grid-aligned")
    seen: set[int] = set()
    for pair in p.confusable_pairs:
        if pair.class_a == pair.class_b:
            raise InvalidParams(f"pair ({pair.class_a}, {pair.class_b}) is degenerate")
        for c in (pair.class_a, pair.class_b):
            if not 0 <= c < p.classes:
                raise InvalidParams(f"pair class {c} out of range")
            if c in seen:
                raise InvalidParams(
                    f"class {c} appears in two confusable pairs; overlapping "
                    "prototypes need a distinguishing segment each")
            seen.add(c)
        if pair.segment not in names:
            raise InvalidParams(
                f"pair ({pair.class_a}, {pair.class_b}) designates unknown "
                f"segment '{pair.segment}'")


def generate_synthetic(params: SynthParams, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Write a synthetic dataset tree and return its validated manifest.

    A pure function of (params, seed): identical inputs produce
    byte-identical trees.
    """
    _validate_synth(params)
    p = params
    grid = p.grid
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    seg_index = {s.name: i for i, s in enumerate(p.segments)}
    class_names = [f"class-{c:02d}" for c in range(p.classes)]

    prototypes = np.zeros((p.classes, grid.h, grid.w, grid.d))
    paired = set()
    for pair in p.confusable_pairs:
        channel_vec = rng.normal(0.0, p.base_scale, grid.d)
        texture = rng.normal(0.0, 1.0, (grid.h, grid.w, grid.d))
        signs = rng.choice([-1.0, 1.0], grid.d)
        base = texture + channel_vec
        rows, cols = _box_cells(p.segments[seg_index[pair.segment]].box, grid)
        for cls, direction in ((pair.class_a, 1.0), (pair.class_b, -1.0)):
            prototypes[cls] = base
            prototypes[cls, rows, cols, :] += direction * p.delta * signs
            paired.add(cls)
    for cls in range(p.classes):
        if cls not in paired:
            channel_vec = rng.normal(0.0, p.base_scale, grid.d)
            prototypes[cls] = rng.normal(0.0, 1.0, (grid.h, grid.w, grid.d)) + channel_vec

    boxes_json = {str(i): s.box.as_list() for i, s in enumerate(p.segments)}
    samples_json = []
    sample_id = 0
    counts = (("train", p.n_train), ("test", p.n_test), ("pool", p.n_pool))
    for cls in range(p.classes):
        for split, count in counts:
            for _ in range(count):
                tensor = prototypes[cls] + rng.normal(0.0, p.sigma, (grid.h, grid.w, grid.d))
                ref = f"tensors/{sample_id}.f32"
                (out / ref).write_bytes(tensor.astype("<f4").tobytes())
                samples_json.append({
                    "sample_id": sample_id,
                    "fine_label": cls,
                    "tensor_ref": ref,
                    "split": split,
                    "segment_boxes": boxes_json,
                })
                sample_id += 1

    manifest_json = {
        "name": f"synthetic-c{p.classes}-seed{seed}",
        "grid": {"h": grid.h, "w": grid.w, "d": grid.d},
        "fine_classes": [
            {"id": c, "name": class_names[c], "coarse_group": c * p.coarse_groups // p.classes}
            for c in range(p.classes)
        ],
        "segment_catalog": [
            {"segment_id": i, "canonical_name": s.name, "synonyms": list(s.synonyms)}
            for i, s in enumerate(p.segments)
        ],
        "samples": samples_json,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest_json, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    lines = []
    for pair in p.confusable_pairs:
        text = (f"{class_names[pair.class_a]} shows a distinctly marked {pair.segment} "
                f"while {class_names[pair.class_b]} has a plain {pair.segment}, so "
                f"focus on the {pair.segment}.")
        lines.append(json.dumps(
            {"pair": [class_names[pair.class_a], class_names[pair.class_b]], "text": text},
            sort_keys=True))
    (out / "oracle_explanations.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    return load_manifest(out / "manifest.json")
