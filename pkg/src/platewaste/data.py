"""Dataset manifests, mask/image serialization, splits, and synthetic plates.

The on-disk layout is a JSON manifest next to ``images/`` and ``masks/``
directories. Masks are single-channel 8-bit PNGs whose pixel values are the
class indices; both round-trip losslessly. The synthetic generator places
food-like regions with *exact* per-class pixel counts and records them in a
ledger CSV, so every downstream number can be checked against ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    FormatError,
    InfeasibleSpec,
    LabelOutOfRange,
    MissingFile,
    ParseError,
    TooFewEntries,
)
from .masks import LabelMask, class_pixel_counts
from .waste import WasteReport, waste_report

MANIFEST_SCHEMA_VERSION = 1
STAGES = ("pre", "post")
SPLITS = ("train", "val", "test")

# class tables per food type; index 0 is always the background
FOOD_CLASS_TABLES: dict[str, tuple[str, ...]] = {
    "adas_polo": ("background", "AdasPolo"),
    "chelo_goosht": ("background", "Meat", "Rice"),
    "fesenjan": ("background", "Fesenjan stew", "Rice"),
    "gheyme_bademjan": ("background", "GheymeBademjan stew", "Rice"),
    "protein_fries": ("background", "French fries", "Protein"),
}

# pooled (pre, post) surface-proportion targets per food class, used by the
# reference fixture so its eating/remaining rates are known in advance
REFERENCE_WASTE_TARGETS: dict[str, tuple[tuple[float, float], ...]] = {
    "adas_polo": ((0.399, 0.047),),
    "chelo_goosht": ((0.085, 0.005), (0.291, 0.061)),
    "fesenjan": ((0.138, 0.025), (0.261, 0.028)),
    "gheyme_bademjan": ((0.143, 0.017), (0.328, 0.066)),
    "protein_fries": ((0.096, 0.021), (0.129, 0.010)),
}


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    mask: str
    stage: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    food_type: str
    class_table: tuple
    entries: tuple
    root: Path = field(default=Path("."), compare=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_table)

    def select(self, stage: str | None = None, split: str | None = None) -> list[ManifestEntry]:
        out = []
        for e in self.entries:
            if stage is not None and e.stage != stage:
                continue
            if split is not None and e.split != split:
                continue
            out.append(e)
        return out

    def mask_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.mask

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.image


def _field_error(path: str, why: str) -> ParseError:
    return ParseError(f"manifest field {path!r}: {why}")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; referenced files must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise _field_error("$", "top level must be an object")
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise _field_error("schema_version", f"must be {MANIFEST_SCHEMA_VERSION}")
    food_type = doc.get("food_type")
    if not isinstance(food_type, str) or not food_type:
        raise _field_error("food_type", "must be a non-empty string")
    table = doc.get("class_table")
    if not isinstance(table, list) or not all(isinstance(n, str) for n in table) or len(table) < 2:
        raise _field_error("class_table", "must be a list of >= 2 class names")
    if table[0] != "background":
        raise _field_error("class_table[0]", "class 0 must be named 'background'")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        raise _field_error("entries", "must be a list")
    entries = []
    for i, raw in enumerate(raw_entries):
        if not isinstance(raw, dict):
            raise _field_error(f"entries[{i}]", "must be an object")
        for key in ("image", "mask", "stage", "split"):
            if not isinstance(raw.get(key), str):
                raise _field_error(f"entries[{i}].{key}", "must be a string")
        if raw["stage"] not in STAGES:
            raise _field_error(f"entries[{i}].stage", f"must be one of {STAGES}")
        if raw["split"] not in SPLITS:
            raise _field_error(f"entries[{i}].split", f"must be one of {SPLITS}")
        entries.append(
            ManifestEntry(image=raw["image"], mask=raw["mask"], stage=raw["stage"], split=raw["split"])
        )
    manifest = DatasetManifest(
        food_type=food_type, class_table=tuple(table), entries=tuple(entries), root=path.parent
    )
    if check_files:
        missing = []
        for e in manifest.entries:
            for p in (manifest.image_path(e), manifest.mask_path(e)):
                if not p.exists():
                    missing.append(str(p))
        if missing:
            raise MissingFile("missing dataset files: " + ", ".join(missing))
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "food_type": manifest.food_type,
        "class_table": list(manifest.class_table),
        "entries": [
            {"image": e.image, "mask": e.mask, "stage": e.stage, "split": e.split}
            for e in manifest.entries
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def read_mask(path, num_classes: int | None = None) -> LabelMask:
    """Load a single-channel 8-bit mask file as a LabelMask.

    When ``num_classes`` is given, values outside the class table raise
    LabelOutOfRange; otherwise the class count is inferred as max+1.
    """
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise FormatError(
                f"{path}: mask must be a single-channel 8-bit image, got mode {img.mode!r}"
            )
        labels = np.asarray(img, dtype=np.int32)
    if labels.ndim != 2:
        raise FormatError(f"{path}: mask must be 2-D, got shape {labels.shape}")
    inferred = int(labels.max()) + 1 if labels.size else 1
    if num_classes is None:
        num_classes = max(inferred, 2)
    elif inferred > num_classes:
        raise LabelOutOfRange(
            f"{path}: mask contains label {inferred - 1} but the class table has "
            f"{num_classes} classes"
        )
    return LabelMask(labels, num_classes)


def write_mask(mask: LabelMask, path) -> None:
    if mask.num_classes > 256:
        raise FormatError("8-bit mask files support at most 256 classes")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.labels.astype(np.uint8), mode="L").save(path)


def read_image(path) -> np.ndarray:
    """Load an RGB image as float64 (H, W, 3) in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(image: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(image) * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_masks(manifest: DatasetManifest, stage: str | None = None, split: str | None = None):
    return [
        read_mask(manifest.mask_path(e), num_classes=manifest.num_classes)
        for e in manifest.select(stage=stage, split=split)
    ]


def split_dataset(entries, test_fraction: float = 0.25, val_fraction: float = 0.15, seed: int = 0):
    """Assign splits: test is carved first, then val from what remains.

    Counts are round(n * fraction) at each stage; the assignment is a seeded
    shuffle, and entries come back in their original order with new splits.
    """
    if not 0.0 < test_fraction < 1.0 or not 0.0 < val_fraction < 1.0:
        raise ValueError("fractions must lie strictly between 0 and 1")
    entries = list(entries)
    n = len(entries)
    n_test = round(n * test_fraction)
    n_val = round((n - n_test) * val_fraction)
    n_train = n - n_test - n_val
    if min(n_test, n_val, n_train) < 1:
        raise TooFewEntries(
            f"{n} entries split into train={n_train}, val={n_val}, test={n_test}"
        )
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_test:
            assignment[idx] = "test"
        elif rank < n_test + n_val:
            assignment[idx] = "val"
        else:
            assignment[idx] = "train"
    return [replace(e, split=assignment[i]) for i, e in enumerate(entries)]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a generated dataset with exact, ledgered pixel counts.

    ``pre_ranges``/``post_ranges`` give one (lo, hi) proportion range per
    food class (class 1 upward). The pooled proportion over each stage hits
    the range midpoint to within one pixel in n*H*W; per-image proportions
    vary inside the range.
    """

    food_type: str
    class_table: tuple
    image_size: int = 256
    n_pre: int = 12
    n_post: int = 12
    pre_ranges: tuple = ()
    post_ranges: tuple = ()
    shapes: tuple = ("ellipse", "blob")
    noise: float = 0.03
    seed: int = 0

    def __post_init__(self):
        want = len(self.class_table) - 1
        if len(self.pre_ranges) != want or len(self.post_ranges) != want:
            raise InfeasibleSpec(
                f"need one pre and one post range per food class ({want}), got "
                f"{len(self.pre_ranges)}/{len(self.post_ranges)}"
            )
        for ranges in (self.pre_ranges, self.post_ranges):
            if sum(hi for _, hi in ranges) > 1.0:
                raise InfeasibleSpec("per-class proportion ranges sum above 1")


@dataclass(frozen=True)
class GeneratedDataset:
    manifest_path: Path
    ledger_path: Path
    manifest: DatasetManifest


# muted food-ish palette; index 0 is the plate/tray background
_PALETTE = np.array(
    [
        (0.16, 0.15, 0.14),
        (0.78, 0.33, 0.18),
        (0.88, 0.83, 0.66),
        (0.42, 0.62, 0.28),
        (0.55, 0.36, 0.62),
        (0.83, 0.66, 0.22),
    ]
)


def _apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights`` (largest remainder)."""
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base))
        base[order[:short]] += 1
    return base


def _region_field(size: int, count: int, shape: str, rng) -> np.ndarray:
    """Scalar field whose smallest values trace an ellipse- or blob-shaped region."""
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    margin = 0.18 * size
    cy, cx = rng.uniform(margin, size - margin, size=2)
    radius = np.sqrt(max(count, 1) / np.pi)
    ratio = rng.uniform(0.6, 1.6)
    theta = rng.uniform(0.0, np.pi)
    dr, dc = rr - cy, cc - cx
    u = dr * np.cos(theta) + dc * np.sin(theta)
    v = -dr * np.sin(theta) + dc * np.cos(theta)
    f = (u / (radius * ratio)) ** 2 + (v / (radius / ratio)) ** 2
    if shape == "blob":
        phi = np.arctan2(dr, dc)
        lobes = rng.integers(3, 6)
        f = f * (1.0 + 0.35 * np.sin(lobes * phi + rng.uniform(0, 2 * np.pi)))
    return f


def _place_regions(size: int, counts: np.ndarray, shapes, rng) -> np.ndarray:
    """Paint each class as a contiguous region with exactly counts[c] pixels."""
    total = size * size
    if counts.sum() > total:
        raise InfeasibleSpec(f"requested {counts.sum()} food pixels on a {total}-pixel grid")
    labels = np.zeros((size, size), dtype=np.int32)
    for ci, count in enumerate(counts, start=1):
        if count == 0:
            continue
        shape = shapes[rng.integers(len(shapes))]
        f = _region_field(size, int(count), shape, rng).ravel()
        f[labels.ravel() != 0] = np.inf  # already claimed
        chosen = np.argpartition(f, count - 1)[:count]
        labels.ravel()[chosen] = ci
    return labels


def _render_image(labels: np.ndarray, noise: float, rng) -> np.ndarray:
    colors = _PALETTE[np.minimum(labels, len(_PALETTE) - 1)]
    img = colors + rng.normal(0.0, noise, size=colors.shape)
    return np.clip(img, 0.0, 1.0)


def synth_generate(spec: SyntheticSpec, out_dir) -> GeneratedDataset:
    """Write a synthetic dataset (images, masks, manifest, ledger) to disk."""
    out_dir = Path(out_dir)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    size = spec.image_size
    area = size * size
    entries = []
    ledger_rows = []

    for stage, n_images, ranges in (
        ("pre", spec.n_pre, spec.pre_ranges),
        ("post", spec.n_post, spec.post_ranges),
    ):
        if n_images == 0:
            continue
        # per-class image counts: totals pinned to the range midpoint
        per_class_counts = []
        for lo, hi in ranges:
            mid = (lo + hi) / 2.0
            total = int(round(mid * n_images * area))
            if total == 0:
                per_class_counts.append(np.zeros(n_images, dtype=np.int64))
                continue
            draws = rng.uniform(max(lo, 1e-9), max(hi, 2e-9), size=n_images)
            per_class_counts.append(_apportion(total, draws))
        count_matrix = np.stack(per_class_counts, axis=1) if per_class_counts else np.zeros(
            (n_images, 0), dtype=np.int64
        )

        for j in range(n_images):
            counts = count_matrix[j]
            labels = _place_regions(size, counts, spec.shapes, rng)
            image = _render_image(labels, spec.noise, rng)
            name = f"{stage}_{j:03d}.png"
            write_mask(LabelMask(labels, len(spec.class_table)), out_dir / "masks" / name)
            write_image(image, out_dir / "images" / name)
            entries.append(
                ManifestEntry(
                    image=f"images/{name}", mask=f"masks/{name}", stage=stage, split="train"
                )
            )
            actual = class_pixel_counts(LabelMask(labels, len(spec.class_table)))
            for ci, cnt in enumerate(actual):
                ledger_rows.append((name, ci, int(cnt)))

    manifest = DatasetManifest(
        food_type=spec.food_type,
        class_table=tuple(spec.class_table),
        entries=tuple(entries),
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    ledger_path = out_dir / "ledger.csv"
    with open(ledger_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image", "class", "pixel_count"])
        writer.writerows(ledger_rows)
    return GeneratedDataset(manifest_path=manifest_path, ledger_path=ledger_path, manifest=manifest)


def reference_fixture_spec(
    food_type: str, image_size: int = 256, images_per_stage: int = 12, seed: int = 0
) -> SyntheticSpec:
    """Synthetic stand-in for one food type with known pooled proportions."""
    if food_type not in REFERENCE_WASTE_TARGETS:
        raise ParseError(f"unknown food type {food_type!r}")
    targets = REFERENCE_WASTE_TARGETS[food_type]
    jitter = 0.15
    return SyntheticSpec(
        food_type=food_type,
        class_table=FOOD_CLASS_TABLES[food_type],
        image_size=image_size,
        n_pre=images_per_stage,
        n_post=images_per_stage,
        pre_ranges=tuple((pre * (1 - jitter), pre * (1 + jitter)) for pre, _ in targets),
        post_ranges=tuple((post * (1 - jitter), post * (1 + jitter)) for _, post in targets),
        seed=seed,
    )


def generate_reference_fixture(
    out_dir, image_size: int = 256, images_per_stage: int = 12, seed: int = 0
) -> dict[str, GeneratedDataset]:
    """Generate the five-food reference fixture; returns datasets by food type."""
    out_dir = Path(out_dir)
    out = {}
    for i, food_type in enumerate(sorted(REFERENCE_WASTE_TARGETS)):
        spec = reference_fixture_spec(
            food_type, image_size=image_size, images_per_stage=images_per_stage, seed=seed + i
        )
        out[food_type] = synth_generate(spec, out_dir / food_type)
    return out


def toy_training_spec(num_images: int = 80, image_size: int = 64, seed: int = 11) -> SyntheticSpec:
    """Small 3-class set tuned for desk-scale training runs.

    Ellipse-only regions with generous areas keep the boundary/interior
    ratio low enough that a narrow model can reach high IoU in a few
    hundred steps.
    """
    return SyntheticSpec(
        food_type="toy",
        class_table=("background", "stew", "rice"),
        image_size=image_size,
        n_pre=num_images,
        n_post=0,
        pre_ranges=((0.18, 0.32), (0.20, 0.34)),
        post_ranges=((0.0, 0.0), (0.0, 0.0)),
        shapes=("ellipse",),
        noise=0.02,
        seed=seed,
    )


def waste_report_from_manifest(manifest: DatasetManifest, clamp: bool = True) -> WasteReport:
    """Pool every pre/post mask in the manifest (all splits) into a report."""
    pre = load_masks(manifest, stage="pre")
    post = load_masks(manifest, stage="post")
    return waste_report(
        manifest.food_type, list(manifest.class_table), pre, post, clamp=clamp
    )


def load_split_arrays(manifest: DatasetManifest, split: str):
    """Stack one split into (images (N,3,H,W) float32, labels (N,H,W) int32)."""
    entries = manifest.select(split=split)
    images, labels = [], []
    for e in entries:
        images.append(read_image(manifest.image_path(e)).transpose(2, 0, 1).astype(np.float32))
        labels.append(read_mask(manifest.mask_path(e), num_classes=manifest.num_classes).labels)
    if not images:
        return (
            np.zeros((0, 3, 0, 0), dtype=np.float32),
            np.zeros((0, 0, 0), dtype=np.int32),
        )
    return np.stack(images), np.stack(labels)
