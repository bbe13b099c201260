"""Synthetic two-domain dataset generation, styling, splits, and disk IO.

The underlying task is shared by both domains: a positive image contains a
bright irregular elliptical blob on a smooth textured background, a negative
image contains the background only. The two domains render the same content
under different global "styles" (blur / contrast / gamma / noise / inversion),
which produces a controllable covariate shift between them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DatasetIOError, ValidationError

POSITIVE = "positive"
NEGATIVE = "negative"
LABELS = (NEGATIVE, POSITIVE)

REAL = "real"
SYNTH_PREFIX = "synthesized_from:"

DATASET_FORMAT_VERSION = "1"

_U64 = (1 << 64) - 1


def _entropy(seed: int) -> int:
    # SeedSequence wants non-negative entropy; fold signed 64-bit seeds.
    return int(seed) & _U64


@dataclass
class ImageSample:
    """One grayscale image with a binary label and provenance tag."""

    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    label: str  # POSITIVE or NEGATIVE
    id: str
    provenance: str = REAL

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE


@dataclass
class DomainDataset:
    """Ordered, labeled sample collection for one domain."""

    domain: str
    samples: list[ImageSample]
    image_size: int

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def label_counts(self) -> tuple[int, int]:
        """(n_negative, n_positive)."""
        n_pos = sum(1 for s in self.samples if s.is_positive)
        return len(self.samples) - n_pos, n_pos

    def pixel_stack(self) -> np.ndarray:
        """All images as one (N, H, W) float32 array."""
        return np.stack([s.pixels for s in self.samples]).astype(np.float32)

    def validate(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.label not in LABELS:
                raise ValidationError(f"sample {s.id!r}: unknown label {s.label!r}")
            if s.id in seen:
                raise ValidationError(f"duplicate sample id {s.id!r} in domain {self.domain!r}")
            seen.add(s.id)
            if s.pixels.shape != (self.image_size, self.image_size):
                raise ValidationError(
                    f"sample {s.id!r}: shape {s.pixels.shape} != "
                    f"({self.image_size}, {self.image_size})"
                )
            if s.pixels.min() < 0.0 or s.pixels.max() > 1.0:
                raise ValidationError(f"sample {s.id!r}: intensities outside [0, 1]")


@dataclass(frozen=True)
class StyleConfig:
    """Global rendering style; defaults are the identity style."""

    gamma: float = 1.0
    contrast: float = 1.0
    brightness_offset: float = 0.0
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    invert: bool = False

    def validate(self, prefix: str = "style") -> None:
        if not self.gamma > 0:
            raise ValidationError(f"{prefix}.gamma must be positive, got {self.gamma}")
        if not self.contrast > 0:
            raise ValidationError(f"{prefix}.contrast must be positive, got {self.contrast}")
        if self.noise_sigma < 0:
            raise ValidationError(f"{prefix}.noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.blur_sigma < 0:
            raise ValidationError(f"{prefix}.blur_sigma must be >= 0, got {self.blur_sigma}")

    def is_identity(self) -> bool:
        return self == StyleConfig()


def default_shift_style() -> StyleConfig:
    """The default target-domain style shift used by the desk-scale benchmark."""
    return StyleConfig(gamma=0.5, contrast=1.3, noise_sigma=0.05, blur_sigma=0.8, invert=False)


@dataclass(frozen=True)
class GenConfig:
    """Synthetic pair generator configuration."""

    n_pos: int = 250
    n_neg: int = 250
    image_size: int = 64
    lesion_radius_range: tuple[float, float] = (4.0, 9.0)
    lesion_contrast_range: tuple[float, float] = (0.35, 0.60)
    style_a: StyleConfig = field(default_factory=StyleConfig)
    style_b: StyleConfig = field(default_factory=StyleConfig)
    seed: int = 7

    def validate(self) -> None:
        if self.n_pos < 1:
            raise ValidationError(f"n_pos must be >= 1, got {self.n_pos}")
        if self.n_neg < 1:
            raise ValidationError(f"n_neg must be >= 1, got {self.n_neg}")
        if self.image_size < 16:
            raise ValidationError(f"image_size must be >= 16, got {self.image_size}")
        for name, rng_ in (
            ("lesion_radius_range", self.lesion_radius_range),
            ("lesion_contrast_range", self.lesion_contrast_range),
        ):
            if len(rng_) != 2 or not (0 < rng_[0] <= rng_[1]):
                raise ValidationError(f"{name} must satisfy 0 < min <= max, got {rng_}")
        self.style_a.validate("style_a")
        self.style_b.validate("style_b")


def gen_config_hash(cfg: GenConfig) -> str:
    payload = {
        "n_pos": cfg.n_pos,
        "n_neg": cfg.n_neg,
        "image_size": cfg.image_size,
        "lesion_radius_range": list(cfg.lesion_radius_range),
        "lesion_contrast_range": list(cfg.lesion_contrast_range),
        "style_a": vars(cfg.style_a),
        "style_b": vars(cfg.style_b),
        "seed": cfg.seed,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def quantize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Snap intensities to the canonical 8-bit grid (round(p*255)/255)."""
    q = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return (q.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def apply_style(pixels: np.ndarray, style: StyleConfig, noise_seed) -> np.ndarray:
    """Apply the style pipeline: blur, contrast/brightness, gamma, noise, invert.

    Pure given (pixels, style, noise_seed); output stays in [0, 1]. With the
    identity style the input is returned unchanged.
    """
    out = np.asarray(pixels, dtype=np.float64)
    if style.blur_sigma > 0:
        out = gaussian_filter(out, sigma=style.blur_sigma)
    if style.contrast != 1.0 or style.brightness_offset != 0.0:
        out = (out - 0.5) * style.contrast + 0.5 + style.brightness_offset
        out = np.clip(out, 0.0, 1.0)
    if style.gamma != 1.0:
        out = np.power(out, style.gamma)
    if style.noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        out = out + rng.normal(0.0, style.noise_sigma, size=out.shape)
        out = np.clip(out, 0.0, 1.0)
    if style.invert:
        out = 1.0 - out
    return out.astype(pixels.dtype if isinstance(pixels, np.ndarray) else np.float64)


def _render_background(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), rng.uniform(0.30, 0.42))
    gx, gy = rng.uniform(-0.08, 0.08, size=2)
    img += gx * (xx / size - 0.5) + gy * (yy / size - 0.5)
    for _ in range(6):
        amp = rng.uniform(-0.10, 0.10)
        cx, cy = rng.uniform(0.0, size, size=2)
        sig = rng.uniform(size / 6.0, size / 3.0)
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sig * sig))
    return img


def _render_blob(size: int, rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    r1 = rng.uniform(*cfg.lesion_radius_range)
    r2 = rng.uniform(*cfg.lesion_radius_range)
    theta = rng.uniform(0.0, np.pi)
    cx, cy = rng.uniform(0.25 * size, 0.75 * size, size=2)
    contrast = rng.uniform(*cfg.lesion_contrast_range)
    w2, w3 = rng.uniform(0.0, 0.18, size=2)
    p2, p3 = rng.uniform(0.0, 2.0 * np.pi, size=2)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    rho = np.sqrt((u / r1) ** 2 + (v / r2) ** 2)
    phi = np.arctan2(v, u)
    # Angular modulation makes the boundary irregular rather than elliptical.
    mod = 1.0 + w2 * np.sin(2.0 * phi + p2) + w3 * np.sin(3.0 * phi + p3)
    rho_eff = rho / mod
    profile = 1.0 / (1.0 + np.exp((rho_eff - 1.0) / 0.10))
    return contrast * profile


def _sample_id(label: str, index: int) -> str:
    return f"{'pos' if label == POSITIVE else 'neg'}-{index:04d}"


def generate_synthetic_pair(cfg: GenConfig) -> tuple[DomainDataset, DomainDataset]:
    """Generate the two-domain pair; both datasets share content, styles differ.

    Fully determined by cfg.seed; per-sample streams are keyed on
    (seed, class, index) so generation order does not matter.
    """
    cfg.validate()
    seed = _entropy(cfg.seed)
    per_domain: dict[str, list[ImageSample]] = {"a": [], "b": []}
    # Negatives first keeps construction order lexicographic by id.
    plan = [(NEGATIVE, 0, cfg.n_neg), (POSITIVE, 1, cfg.n_pos)]
    for label, class_code, count in plan:
        for idx in range(count):
            rng = np.random.default_rng([seed, class_code, idx])
            base = _render_background(cfg.image_size, rng)
            if label == POSITIVE:
                base = base + _render_blob(cfg.image_size, rng, cfg)
            base = np.clip(base, 0.0, 1.0)
            for domain_code, (domain, style) in enumerate(
                (("a", cfg.style_a), ("b", cfg.style_b))
            ):
                styled = apply_style(base, style, [seed, class_code, idx, 100 + domain_code])
                per_domain[domain].append(
                    ImageSample(
                        pixels=quantize_pixels(styled),
                        label=label,
                        id=_sample_id(label, idx),
                        provenance=REAL,
                    )
                )
    ds_a = DomainDataset("a", per_domain["a"], cfg.image_size)
    ds_b = DomainDataset("b", per_domain["b"], cfg.image_size)
    ds_a.validate()
    ds_b.validate()
    return ds_a, ds_b


def split_dataset(
    ds: DomainDataset, train_fraction: float, seed: int
) -> tuple[DomainDataset, DomainDataset]:
    """Stratified train/test split; train gets floor(fraction * class count)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    train_ids: set[str] = set()
    for class_code, label in enumerate(LABELS):
        members = [s.id for s in ds.samples if s.label == label]
        if len(members) < 2:
            raise ValidationError(
                f"class {label!r} has {len(members)} sample(s) in domain "
                f"{ds.domain!r}; need at least 2 to stratify"
            )
        rng = np.random.default_rng([_entropy(seed), class_code])
        perm = rng.permutation(len(members))
        n_train = int(np.floor(train_fraction * len(members)))
        train_ids.update(members[i] for i in perm[:n_train])
    train = [s for s in ds.samples if s.id in train_ids]
    test = [s for s in ds.samples if s.id not in train_ids]
    return (
        DomainDataset(ds.domain, train, ds.image_size),
        DomainDataset(ds.domain, test, ds.image_size),
    )


@dataclass
class DomainSplit:
    """A domain's train/test halves, as consumed by the experiment runners."""

    train: DomainDataset
    test: DomainDataset

    @property
    def domain(self) -> str:
        return self.train.domain


def split_pair(
    ds: DomainDataset, train_fraction: float, seed: int
) -> DomainSplit:
    train, test = split_dataset(ds, train_fraction, seed)
    return DomainSplit(train=train, test=test)


# ---------------------------------------------------------------------------
# Disk layout: <root>/<domain>/<train|test>/<pos|neg>/<id>.png (8-bit gray)
# with a manifest.json at <root> covering every tree under it.
# ---------------------------------------------------------------------------

_LABEL_DIR = {NEGATIVE: "neg", POSITIVE: "pos"}
_DIR_LABEL = {v: k for k, v in _LABEL_DIR.items()}


def _load_manifest(root: Path) -> dict | None:
    path = root / "manifest.json"
    if not path.exists():
        return None
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"ill-formed manifest.json at {root}: {exc}") from exc
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetIOError(
            f"unsupported dataset format_version {version!r} at {root} "
            f"(expected {DATASET_FORMAT_VERSION!r})"
        )
    return manifest


def save_dataset(
    ds: DomainDataset,
    root_path: str | Path,
    split: str = "train",
    gen_hash: str | None = None,
) -> Path:
    """Write one <domain>/<split> tree under root and update the manifest."""
    if split not in ("train", "test"):
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")
    ds.validate()
    root = Path(root_path)
    tree = root / ds.domain / split
    for sub in _LABEL_DIR.values():
        (tree / sub).mkdir(parents=True, exist_ok=True)
    for s in ds.samples:
        byte_img = np.round(s.pixels * 255.0).astype(np.uint8)
        Image.fromarray(byte_img, mode="L").save(tree / _LABEL_DIR[s.label] / f"{s.id}.png")

    manifest = _load_manifest(root) or {
        "format_version": DATASET_FORMAT_VERSION,
        "image_size": ds.image_size,
        "generator_config_hash": gen_hash,
        "trees": {},
    }
    if manifest["image_size"] != ds.image_size:
        raise DatasetIOError(
            f"manifest at {root} has image_size {manifest['image_size']}, "
            f"cannot add a {ds.image_size}px tree"
        )
    if gen_hash is not None:
        manifest["generator_config_hash"] = gen_hash
    n_neg, n_pos = ds.label_counts()
    manifest["trees"][f"{ds.domain}/{split}"] = {
        "domain": ds.domain,
        "split": split,
        "n_pos": n_pos,
        "n_neg": n_neg,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return tree


def _resolve_tree(root: Path, domain: str | None, split: str | None) -> tuple[str, str]:
    if not root.is_dir():
        raise DatasetIOError(f"dataset root {root} is not a directory")
    domains = sorted(d.name for d in root.iterdir() if d.is_dir())
    if domain is None:
        if len(domains) != 1:
            raise DatasetIOError(
                f"no samples found under {root}" if not domains else
                f"multiple domains under {root}: {domains}; pass domain explicitly"
            )
        domain = domains[0]
    elif domain not in domains:
        raise DatasetIOError(f"domain {domain!r} not found under {root} (have {domains})")
    splits = sorted(d.name for d in (root / domain).iterdir() if d.is_dir())
    if split is None:
        if len(splits) != 1:
            raise DatasetIOError(
                f"no samples found under {root / domain}" if not splits else
                f"multiple splits under {root / domain}: {splits}; pass split explicitly"
            )
        split = splits[0]
    elif split not in splits:
        raise DatasetIOError(f"split {split!r} not found under {root / domain} (have {splits})")
    return domain, split


def load_dataset(
    root_path: str | Path, domain: str | None = None, split: str | None = None
) -> DomainDataset:
    """Load one <domain>/<split> tree; domain/split may be omitted if unambiguous."""
    root = Path(root_path)
    manifest = _load_manifest(root)
    domain, split = _resolve_tree(root, domain, split)
    tree = root / domain / split

    samples: list[ImageSample] = []
    seen: set[str] = set()
    for sub in sorted(_DIR_LABEL):
        label_dir = tree / sub
        if not label_dir.is_dir():
            continue
        for path in sorted(label_dir.iterdir()):
            if path.is_dir():
                raise DatasetIOError(f"unexpected directory {path} in dataset tree")
            if path.suffix.lower() != ".png":
                raise DatasetIOError(f"non-image file {path} in dataset tree")
            try:
                with Image.open(path) as img:
                    arr = np.asarray(img.convert("L"), dtype=np.uint8)
            except OSError as exc:
                raise DatasetIOError(f"unreadable image {path}: {exc}") from exc
            sample_id = path.stem
            if sample_id in seen:
                raise DatasetIOError(f"duplicate id {sample_id!r} under {tree}")
            seen.add(sample_id)
            samples.append(
                ImageSample(
                    pixels=(arr.astype(np.float32) / np.float32(255.0)),
                    label=_DIR_LABEL[sub],
                    id=sample_id,
                    provenance=REAL,
                )
            )
    if not samples:
        raise DatasetIOError(f"no samples found under {tree}")
    samples.sort(key=lambda s: s.id)
    size = samples[0].pixels.shape[0]
    if any(s.pixels.shape != (size, size) for s in samples):
        raise DatasetIOError(f"inconsistent image sizes under {tree}")
    if manifest is not None and manifest.get("image_size") not in (None, size):
        raise DatasetIOError(
            f"images under {tree} are {size}px but manifest says {manifest['image_size']}px"
        )
    ds = DomainDataset(domain, samples, size)
    ds.validate()
    return ds


def list_tree_names(root_path: str | Path) -> list[str]:
    """All '<domain>/<split>' trees present under a dataset root."""
    root = Path(root_path)
    names = []
    if not root.is_dir():
        return names
    for domain_dir in sorted(d for d in root.iterdir() if d.is_dir()):
        for split_dir in sorted(d for d in domain_dir.iterdir() if d.is_dir()):
            names.append(f"{domain_dir.name}/{split_dir.name}")
    return names


__all__ = [
    "POSITIVE",
    "NEGATIVE",
    "LABELS",
    "REAL",
    "SYNTH_PREFIX",
    "ImageSample",
    "DomainDataset",
    "DomainSplit",
    "StyleConfig",
    "GenConfig",
    "default_shift_style",
    "gen_config_hash",
    "quantize_pixels",
    "apply_style",
    "generate_synthetic_pair",
    "split_dataset",
    "split_pair",
    "save_dataset",
    "load_dataset",
    "list_tree_names",
]
