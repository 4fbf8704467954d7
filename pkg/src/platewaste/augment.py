"""Probabilistic, mask-consistent augmentation pipeline.

Each step of a spec is applied independently with its own probability;
geometric steps warp image and mask identically (nearest-neighbor for the
mask so labels stay valid, background/black fill for regions warped in from
outside the frame), photometric steps touch the image only.

Images are float arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch
from .masks import LabelMask

GEOMETRIC_KINDS = frozenset({"flip", "rot90", "rotate", "shear"})
PHOTOMETRIC_KINDS = frozenset({"hue", "saturation", "brightness", "exposure", "blur"})


@dataclass(frozen=True)
class AugmentationStep:
    """One pipeline entry: a step kind, its parameter range, and its odds.

    ``limit`` is the symmetric half-range (degrees for rotate/hue, percent
    for saturation/brightness/exposure, shear factor x100, max radius in
    pixels for blur); flip and rot90 ignore it.
    """

    kind: str
    limit: float = 0.0
    probability: float = 0.5

    def __post_init__(self):
        if self.kind not in GEOMETRIC_KINDS | PHOTOMETRIC_KINDS:
            raise ValueError(f"unknown augmentation step kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class AugmentationSpec:
    name: str
    steps: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class PlannedStep:
    kind: str
    params: tuple


@dataclass(frozen=True)
class AugmentationPlan:
    """Concrete sampled parameters for every step that fired."""

    steps: tuple
    seed: int
    index: int

    @property
    def is_photometric_only(self) -> bool:
        return all(s.kind in PHOTOMETRIC_KINDS for s in self.steps)


def sample_plan(spec: AugmentationSpec, rng_seed: int, index: int) -> AugmentationPlan:
    """Draw a concrete plan; reproducible from (spec, rng_seed, index)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([rng_seed, index])))
    planned = []
    for step in spec.steps:
        if rng.random() >= step.probability:
            continue
        if step.kind == "flip":
            params = (rng.choice(["h", "v"]),)
        elif step.kind == "rot90":
            params = (rng.choice(["cw", "ccw", "180"]),)
        elif step.kind == "shear":
            params = (
                rng.uniform(-step.limit, step.limit) / 100.0,
                rng.uniform(-step.limit, step.limit) / 100.0,
            )
        elif step.kind == "blur":
            params = (rng.uniform(0.0, step.limit),)
        else:
            params = (rng.uniform(-step.limit, step.limit),)
        planned.append(PlannedStep(kind=step.kind, params=params))
    return AugmentationPlan(steps=tuple(planned), seed=rng_seed, index=index)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(delta, 1e-12)
    h = np.where(
        maxc == r, (g - b) / safe, np.where(maxc == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe)
    )
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q),
    ]
    r = np.choose(i, [c[0] for c in choices])
    g = np.choose(i, [c[1] for c in choices])
    b = np.choose(i, [c[2] for c in choices])
    return np.stack([r, g, b], axis=-1)


def _affine_pair(image, labels, forward: np.ndarray):
    """Warp image (bilinear) and labels (nearest) by one forward 2x2 map on (row, col)."""
    h, w = labels.shape
    inv = np.linalg.inv(forward)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - inv @ center
    warped = np.stack(
        [
            ndimage.affine_transform(image[..., c], inv, offset=offset, order=1, cval=0.0)
            for c in range(image.shape[-1])
        ],
        axis=-1,
    )
    new_labels = ndimage.affine_transform(labels, inv, offset=offset, order=0, cval=0)
    return warped, new_labels


def _apply_step(step: PlannedStep, image: np.ndarray, labels: np.ndarray):
    kind = step.kind
    if kind == "flip":
        axis = 1 if step.params[0] == "h" else 0
        return np.flip(image, axis=axis), np.flip(labels, axis=axis)
    if kind == "rot90":
        k = {"ccw": 1, "180": 2, "cw": 3}[step.params[0]]
        return np.rot90(image, k=k, axes=(0, 1)), np.rot90(labels, k=k)
    if kind == "rotate":
        theta = np.deg2rad(step.params[0])
        forward = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        return _affine_pair(image, labels, forward)
    if kind == "shear":
        sx, sy = step.params
        forward = np.array([[1.0, sy], [sx, 1.0]])
        return _affine_pair(image, labels, forward)
    if kind == "hue":
        hsv = _rgb_to_hsv(image)
        hsv[..., 0] = (hsv[..., 0] + step.params[0] / 360.0) % 1.0
        return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0), labels
    if kind == "saturation":
        hsv = _rgb_to_hsv(image)
        hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + step.params[0] / 100.0), 0.0, 1.0)
        return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0), labels
    if kind == "brightness":
        return np.clip(image * (1.0 + step.params[0] / 100.0), 0.0, 1.0), labels
    if kind == "exposure":
        return np.clip(image + step.params[0] / 100.0, 0.0, 1.0), labels
    if kind == "blur":
        sigma = step.params[0]
        if sigma <= 0:
            return image, labels
        return (
            np.clip(ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0)), 0.0, 1.0),
            labels,
        )
    raise ValueError(f"unknown planned step {kind!r}")


def apply(plan: AugmentationPlan, image: np.ndarray, mask: LabelMask):
    """Run every planned step in order; returns the new (image, mask) pair."""
    if image.shape[:2] != (mask.height, mask.width):
        raise DimensionMismatch(
            f"image {image.shape[:2]} and mask {(mask.height, mask.width)} differ"
        )
    out_image = np.asarray(image, dtype=np.float64)
    out_labels = np.asarray(mask.labels)
    for step in plan.steps:
        out_image, out_labels = _apply_step(step, out_image, out_labels)
    return np.ascontiguousarray(out_image), LabelMask(out_labels, mask.num_classes)


def expand_training_set(
    pairs,
    spec: AugmentationSpec,
    multiplier: int,
    rng_seed: int,
    include_original: bool = True,
):
    """Yield ``multiplier`` copies per training pair, lazily.

    The first copy is the untouched original unless ``include_original`` is
    off, in which case every copy gets a freshly sampled plan. Output order
    and content are fully determined by (pairs, spec, multiplier, rng_seed).
    """
    if multiplier < 1:
        raise ValueError(f"multiplier must be >= 1, got {multiplier}")
    for i, (image, mask) in enumerate(pairs):
        for k in range(multiplier):
            if k == 0 and include_original:
                yield np.asarray(image, dtype=np.float64), mask, None
                continue
            plan = sample_plan(spec, rng_seed, i * multiplier + k)
            aug_image, aug_mask = apply(plan, image, mask)
            yield aug_image, aug_mask, plan


def _steps(*entries) -> tuple:
    return tuple(AugmentationStep(kind=k, limit=lim) for k, lim in entries)


@dataclass(frozen=True)
class AugmentationPreset:
    """Built-in per-food-type pipeline plus its dataset split sizes."""

    spec: AugmentationSpec
    train_size: int
    test_size: int


PRESETS: dict[str, AugmentationPreset] = {
    "adas_polo": AugmentationPreset(
        spec=AugmentationSpec(
            name="adas_polo",
            steps=_steps(
                ("flip", 0), ("rot90", 0), ("rotate", 15), ("shear", 10),
                ("saturation", 5), ("brightness", 10), ("exposure", 3), ("blur", 1.0),
            ),
        ),
        train_size=264,
        test_size=63,
    ),
    "chelo_goosht": AugmentationPreset(
        spec=AugmentationSpec(
            name="chelo_goosht",
            steps=_steps(
                ("flip", 0), ("rot90", 0), ("rotate", 15), ("shear", 15),
                ("hue", 15), ("saturation", 20), ("brightness", 15), ("exposure", 5),
            ),
        ),
        train_size=207,
        test_size=64,
    ),
    "fesenjan": AugmentationPreset(
        spec=AugmentationSpec(
            name="fesenjan",
            steps=_steps(
                ("flip", 0), ("rot90", 0), ("rotate", 15), ("shear", 15),
                ("hue", 18), ("saturation", 15), ("brightness", 10), ("exposure", 10),
                ("blur", 1.3),
            ),
        ),
        train_size=148,
        test_size=61,
    ),
    "gheyme_bademjan": AugmentationPreset(
        spec=AugmentationSpec(
            name="gheyme_bademjan",
            steps=_steps(
                ("flip", 0), ("rot90", 0), ("rotate", 15), ("shear", 15),
                ("hue", 15), ("saturation", 15), ("brightness", 15), ("blur", 1.2),
            ),
        ),
        train_size=167,
        test_size=63,
    ),
    "protein_fries": AugmentationPreset(
        spec=AugmentationSpec(
            name="protein_fries",
            steps=_steps(
                ("flip", 0), ("rot90", 0), ("rotate", 15), ("shear", 15),
                ("hue", 15), ("saturation", 10), ("brightness", 15), ("exposure", 5),
                ("blur", 1.2),
            ),
        ),
        train_size=273,
        test_size=103,
    ),
}
