"""Synthetic two-channel "isointense" head phantoms with ground truth.

Geometry: an ellipsoidal brain mask with a smoothly perturbed surface; CSF
is an outer shell plus interior pockets, and the rest is split into a
folded outer GM layer around a WM core. Class sizes are set by quantile
thresholds on smooth score fields, which pins prevalences to the target
ratio. Intensities are per-class Gaussians whose GM/WM means sit well
within one standard deviation of each other in both channels, so only
spatial context separates them.

Randomness comes from numpy's PCG64 bit generator seeded with the phantom
seed; normals use numpy's ziggurat ``standard_normal``. The same seed and
numpy version therefore give bitwise identical phantoms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .labeling import BACKGROUND, CLASS_NAMES, CSF, GM, TISSUES, WM

CHANNELS = ("t1", "t2")


class PhantomError(RuntimeError):
    pass


def _default_means() -> dict[str, tuple[float, float]]:
    # (t1, t2); GM/WM half a standard deviation apart, CSF about four away
    return {"csf": (60.0, 150.0), "gm": (100.0, 100.0), "wm": (105.0, 95.0)}


def _default_stds() -> dict[str, tuple[float, float]]:
    return {"csf": (12.0, 12.0), "gm": (10.0, 10.0), "wm": (10.0, 10.0)}


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    seed: int = 0
    means: dict[str, tuple[float, float]] = field(default_factory=_default_means)
    stds: dict[str, tuple[float, float]] = field(default_factory=_default_stds)
    ratio: dict[str, float] = field(default_factory=lambda: {"csf": 1.0, "gm": 2.0, "wm": 1.5})
    brain_fraction: tuple[float, float, float] = (0.44, 0.40, 0.36)
    surface_roughness: float = 0.08
    pocket_strength: float = 3.0
    fold_strength: float = 2.5
    noise: float = 1.0
    blur: float = 0.6
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    max_retries: int = 5

    def validate(self) -> None:
        for c in ("csf", "gm", "wm"):
            if c not in self.means or c not in self.stds or c not in self.ratio:
                raise PhantomError(f"class {c!r} missing from means/stds/ratio")
        for ch in range(2):
            diff = abs(self.means["gm"][ch] - self.means["wm"][ch])
            pooled = np.sqrt(0.5 * (self.stds["gm"][ch] ** 2 + self.stds["wm"][ch] ** 2))
            if not diff < pooled:
                raise PhantomError(
                    f"channel {CHANNELS[ch]}: GM/WM means differ by {diff}, not within one pooled "
                    f"standard deviation ({pooled}); phantom would not be isointense")
        if self.noise < 0 or self.blur < 0:
            raise PhantomError("noise and blur must be non-negative")

    @property
    def target_fractions(self) -> dict[str, float]:
        total = sum(self.ratio.values())
        return {k: v / total for k, v in self.ratio.items()}


@dataclass
class Subject:
    name: str
    image: np.ndarray  # (2, D, H, W) float32
    labels: np.ndarray  # (D, H, W) uint8
    mask: np.ndarray  # (D, H, W) bool
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.image.shape[1:] != self.labels.shape or self.labels.shape != self.mask.shape:
            raise PhantomError("image, labels and mask disagree on shape")


def _smooth_field(rng: np.random.Generator, dims, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="wrap")
    return (f - f.mean()) / f.std()


def _quantile_split(score: np.ndarray, fraction: float) -> np.ndarray:
    """Boolean selection of the ``fraction`` of entries with the largest score."""
    n = int(round(fraction * score.size))
    order = np.argsort(-score, kind="stable")
    sel = np.zeros(score.size, dtype=bool)
    sel[order[:n]] = True
    return sel


def _geometry(spec: PhantomSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    dims = spec.dims
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    r2 = np.zeros(dims)
    for g, d, frac in zip(grids, dims, spec.brain_fraction):
        r2 += ((g - (d - 1) / 2) / (frac * d)) ** 2
    r = np.sqrt(r2)
    rough = _smooth_field(rng, dims, min(dims) / 8)
    mask = r < 1.0 + spec.surface_roughness * rough
    mask = ndimage.binary_fill_holes(mask)
    depth = ndimage.distance_transform_edt(mask)

    pockets = _smooth_field(rng, dims, min(dims) / 12)
    folds = _smooth_field(rng, dims, min(dims) / 16)
    fr = spec.target_fractions
    inside = np.flatnonzero(mask)
    d_in = depth.ravel()[inside]
    labels = np.zeros(mask.size, dtype=np.uint8)

    csf_score = -d_in + spec.pocket_strength * pockets.ravel()[inside]
    is_csf = _quantile_split(csf_score, fr["csf"])
    rest = inside[~is_csf]
    wm_score = depth.ravel()[rest] + spec.fold_strength * folds.ravel()[rest]
    is_wm = _quantile_split(wm_score, fr["wm"] / (fr["wm"] + fr["gm"]))
    labels[inside[is_csf]] = CSF
    labels[rest] = GM
    labels[rest[is_wm]] = WM
    return labels.reshape(dims), mask


def _intensities(spec: PhantomSpec, labels: np.ndarray, mask: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    image = np.zeros((2,) + labels.shape, dtype=np.float64)
    for ch in range(2):
        mean_img = np.zeros(labels.shape)
        std_img = np.zeros(labels.shape)
        for code in TISSUES:
            name = CLASS_NAMES[code]
            sel = labels == code
            mean_img[sel] = spec.means[name][ch]
            std_img[sel] = spec.stds[name][ch]
        if spec.blur > 0:
            # partial voluming: average tissue means across interfaces, inside the brain only
            num = ndimage.gaussian_filter(mean_img, spec.blur)
            den = ndimage.gaussian_filter(mask.astype(np.float64), spec.blur)
            mean_img = np.where(mask, num / np.maximum(den, 1e-12), 0.0)
        noise = rng.standard_normal(labels.shape)
        image[ch] = np.where(mask, mean_img + spec.noise * std_img * noise, 0.0)
    # zero is reserved for background
    floor = 1e-3
    image[:, mask] = np.maximum(image[:, mask], floor)
    return image.astype(np.float32)


def achieved_fractions(labels: np.ndarray) -> dict[str, float]:
    counts = np.bincount(labels.ravel(), minlength=4)
    total = counts[1:].sum()
    return {CLASS_NAMES[c]: counts[c] / total for c in TISSUES}


def generate_phantom(spec: PhantomSpec | None = None, name: str | None = None) -> Subject:
    """Deterministic phantom for ``spec.seed``; retries with derived seeds if prevalences miss."""
    spec = spec or PhantomSpec()
    spec.validate()
    target = spec.target_fractions
    for attempt in range(spec.max_retries):
        rng = np.random.Generator(np.random.PCG64([spec.seed, attempt]))
        labels, mask = _geometry(spec, rng)
        got = achieved_fractions(labels) if mask.any() else {k: 0.0 for k in target}
        if all(abs(got[k] - target[k]) <= 0.2 * target[k] for k in target) and \
                all((labels == c).any() for c in TISSUES):
            image = _intensities(spec, labels, mask, rng)
            return Subject(name or f"phantom{spec.seed:03d}", image, labels, mask, tuple(spec.spacing))
    raise PhantomError(
        f"could not reach class ratio {spec.ratio} within {spec.max_retries} attempts "
        f"for dims {spec.dims}; last fractions {got}")


def phantom_cohort(n: int, base_seed: int = 0, **spec_kw) -> list[Subject]:
    return [generate_phantom(PhantomSpec(seed=base_seed + i, **spec_kw), name=f"phantom{base_seed + i:03d}")
            for i in range(n)]


@dataclass
class HistogramTable:
    edges: dict[str, np.ndarray]  # per channel, 257 edges
    counts: dict[tuple[str, str], np.ndarray]  # (class, channel) -> 256 counts

    def to_tsv(self) -> str:
        lines = []
        for ch, e in self.edges.items():
            lines.append("\t".join(["edges", ch] + [f"{v:.6g}" for v in e]))
        for (cls, ch), c in self.counts.items():
            lines.append("\t".join([cls, ch] + [str(int(v)) for v in c]))
        return "\n".join(lines) + "\n"

    def overlap(self, a: str, b: str, channel: str) -> float:
        """Histogram intersection of the two normalized class histograms."""
        ha = self.counts[(a, channel)] / max(self.counts[(a, channel)].sum(), 1)
        hb = self.counts[(b, channel)] / max(self.counts[(b, channel)].sum(), 1)
        return float(np.minimum(ha, hb).sum())


def export_histograms(subject: Subject, bins: int = 256) -> HistogramTable:
    """Per-class, per-channel intensity counts over the observed in-brain range."""
    edges, counts = {}, {}
    inside = subject.labels != BACKGROUND
    for ch, chname in enumerate(CHANNELS):
        vals = subject.image[ch][inside]
        lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
        if hi <= lo:
            hi = lo + 1.0
        e = np.linspace(lo, hi, bins + 1)
        edges[chname] = e
        for code in TISSUES:
            v = subject.image[ch][subject.labels == code]
            counts[(CLASS_NAMES[code], chname)] = np.histogram(v, bins=e)[0]
    return HistogramTable(edges, counts)
