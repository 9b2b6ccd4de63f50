"""Deterministic synthetic PET/CT/probability phantoms.

Each phantom is a set of ellipsoidal true lesions (hot in PET, offset in
CT, confidently foreground in the probability map) plus optional
false-positive blobs whose probability sits inside the uncertain entropy
band while their PET/CT stay background-like: exactly the over-segmented
structures the graph refinement is meant to remove. All randomness comes
from counter-based (Philox) streams keyed by (seed, channel), so outputs
are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .uncertainty import uncertain_band
from .volume import Mask3, Volume3

PROB_LESION = 0.95
PROB_BACKGROUND = 0.02
CT_LESION_OFFSET = 45.0
BAND_MARGIN = 1e-4

_CHANNEL_CT = 0
_CHANNEL_PET = 1
_CHANNEL_PROB = 2


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid: center and semi-axes in voxel units (z, y, x)."""

    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    pet_intensity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if len(self.center) != 3 or len(self.radii) != 3:
            raise ValueError("center and radii must have three components (z, y, x)")
        if any(r <= 0 for r in self.radii):
            raise ValueError(f"radii must be positive, got {self.radii}")


@dataclass(frozen=True)
class FalsePositiveBlob(Ellipsoid):
    """Blob present in the probability map but absent from the ground truth."""

    prob_level: float = 0.65


@dataclass(frozen=True)
class BackgroundStats:
    pet_mean: float = 1.0
    pet_sd: float = 0.2
    ct_mean: float = 40.0
    ct_sd: float = 10.0

    def __post_init__(self):
        if self.pet_sd < 0 or self.ct_sd < 0:
            raise ValueError("background standard deviations must be >= 0")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lesions: tuple[Ellipsoid, ...] = ()
    false_positives: tuple[FalsePositiveBlob, ...] = ()
    background: BackgroundStats = field(default_factory=BackgroundStats)
    noise_sd: float = 0.01
    blur_radius: int = 1
    alpha: float = 0.8
    beta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "lesions", tuple(self.lesions))
        object.__setattr__(self, "false_positives", tuple(self.false_positives))
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        p_lo, p_hi = uncertain_band(self.alpha)
        for kind, shapes in (("lesion", self.lesions), ("false_positive", self.false_positives)):
            for i, shape in enumerate(shapes):
                for c, r, n in zip(shape.center, shape.radii, self.dims):
                    if c - r < 0 or c + r > n - 1:
                        raise ValueError(f"{kind} {i} extends outside the volume bounds")
        lower = max(self.beta, p_lo)
        for i, blob in enumerate(self.false_positives):
            if not lower + BAND_MARGIN <= blob.prob_level <= p_hi - BAND_MARGIN:
                raise ValueError(
                    f"false_positive {i} prob_level {blob.prob_level} must lie inside "
                    f"({lower:.4f}, {p_hi:.4f}) to be both segmented and uncertain"
                )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dims"] = list(self.dims)
        out["spacing"] = list(self.spacing)
        out["lesions"] = [
            {"center": list(l.center), "radii": list(l.radii), "pet_intensity": l.pet_intensity}
            for l in self.lesions
        ]
        out["false_positives"] = [
            {
                "center": list(b.center),
                "radii": list(b.radii),
                "pet_intensity": b.pet_intensity,
                "prob_level": b.prob_level,
            }
            for b in self.false_positives
        ]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PhantomSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown phantom spec fields: {sorted(unknown)}")
        kwargs = dict(raw)
        if "lesions" in kwargs:
            kwargs["lesions"] = tuple(Ellipsoid(**l) for l in kwargs["lesions"])
        if "false_positives" in kwargs:
            kwargs["false_positives"] = tuple(
                FalsePositiveBlob(**b) for b in kwargs["false_positives"]
            )
        if "background" in kwargs and isinstance(kwargs["background"], dict):
            kwargs["background"] = BackgroundStats(**kwargs["background"])
        return cls(**kwargs)


def _ellipsoid_mask(dims: tuple[int, int, int], shape: Ellipsoid) -> np.ndarray:
    z, y, x = np.ogrid[: dims[0], : dims[1], : dims[2]]
    cz, cy, cx = shape.center
    rz, ry, rx = shape.radii
    return ((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0


def _box_blur(arr: np.ndarray, radius: int) -> np.ndarray:
    """Separable moving average with a truncated window at the edges."""
    out = arr.astype(np.float64)
    if radius <= 0:
        return out
    for axis in range(3):
        moved = np.moveaxis(out, axis, -1)
        n = moved.shape[-1]
        csum = np.concatenate(
            [np.zeros(moved.shape[:-1] + (1,)), np.cumsum(moved, axis=-1)], axis=-1
        )
        hi = np.minimum(np.arange(n) + radius + 1, n)
        lo = np.maximum(np.arange(n) - radius, 0)
        window = (csum[..., hi] - csum[..., lo]) / (hi - lo)
        out = np.moveaxis(window, -1, axis)
    return out


def _channel_rng(seed: int, channel: int) -> np.random.Generator:
    key = np.array([seed % (1 << 64), channel], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate_phantom(spec: PhantomSpec) -> dict[str, Volume3]:
    """Build {ct, pet, gt, prob} volumes for the spec, bit-deterministically.

    The probability map is clamped against the uncertain band for the
    configured alpha: true-lesion voxels strictly above it, background
    strictly below it, false-positive voxels at their prob_level inside it.
    """
    dims = spec.dims
    p_lo, p_hi = uncertain_band(spec.alpha)

    gt = np.zeros(dims, dtype=bool)
    for lesion in spec.lesions:
        gt |= _ellipsoid_mask(dims, lesion)

    ct = _channel_rng(spec.seed, _CHANNEL_CT).normal(
        spec.background.ct_mean, spec.background.ct_sd, size=dims
    )
    ct[gt] += CT_LESION_OFFSET

    pet = _channel_rng(spec.seed, _CHANNEL_PET).normal(
        spec.background.pet_mean, spec.background.pet_sd, size=dims
    )
    for lesion in spec.lesions:
        pet[_ellipsoid_mask(dims, lesion)] += lesion.pet_intensity
    for blob in spec.false_positives:
        pet[_ellipsoid_mask(dims, blob)] += blob.pet_intensity
    pet = _box_blur(pet, spec.blur_radius)

    noise = _channel_rng(spec.seed, _CHANNEL_PROB).normal(0.0, spec.noise_sd, size=dims)
    prob = np.clip(PROB_BACKGROUND + noise, 0.0, p_lo - BAND_MARGIN)
    for blob in spec.false_positives:
        prob[_ellipsoid_mask(dims, blob)] = blob.prob_level
    lesion_prob = np.clip(PROB_LESION + noise, p_hi + BAND_MARGIN, 1.0 - 1e-6)
    prob[gt] = lesion_prob[gt]

    return {
        "ct": Volume3(ct.astype(np.float32), spec.spacing),
        "pet": Volume3(pet.astype(np.float32), spec.spacing),
        "gt": Volume3(gt.astype(np.uint8), spec.spacing),
        "prob": Volume3(prob.astype(np.float32), spec.spacing),
    }
