"""Dataset ingestion, preprocessing, augmentation, and splitting.

Datasets are described by a CSV manifest (UTF-8, header row required):

    relative_path,label
    normal/img_0001.jpg,normal
    cracked/img_0371.jpg,cracked

Labels come from the four-way surface taxonomy (normal, cracked, dusty,
shadowed) or, after binary relabeling, from {normal, faulty}. Image paths are
resolved relative to the manifest's directory unless an explicit root is
given.

Split reproducibility: stratified_split shuffles each class's rows with
``random.Random(seed)`` (CPython's Mersenne Twister + Fisher-Yates), iterating
classes in taxonomy order. Both pieces are stable across platforms and
Python versions, so a (manifest, fraction, seed) triple pins the split
exactly; the README documents this contract.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

MULTICLASS_LABELS = ("normal", "cracked", "dusty", "shadowed")
BINARY_LABELS = ("normal", "faulty")
FAULT_SUBTYPES = ("cracked", "dusty", "shadowed")


@dataclass
class Sample:
    image_path: str  # relative to the dataset root
    label: str
    split_tag: str = "unassigned"


@dataclass
class Dataset:
    samples: list[Sample]
    taxonomy: str  # "multiclass" | "binary"
    manifest_path: Path | None = None
    root: Path | None = None

    def __len__(self):
        return len(self.samples)

    @property
    def class_names(self) -> tuple[str, ...]:
        return MULTICLASS_LABELS if self.taxonomy == "multiclass" else BINARY_LABELS

    def label_index(self, label: str) -> int:
        return self.class_names.index(label)

    def counts(self) -> dict[str, int]:
        out = {name: 0 for name in self.class_names}
        for s in self.samples:
            out[s.label] += 1
        return out

    def resolve(self, sample: Sample) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / sample.image_path


def load_manifest(path, root=None) -> Dataset:
    """Read and validate a manifest CSV; row order is preserved.

    Rejects unknown labels, duplicate paths, missing image files, and
    manifests that mix the two taxonomies.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = Path(root) if root is not None else path.parent

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row 'relative_path,label'") from None
        if [col.strip() for col in header] != ["relative_path", "label"]:
            raise DataError(f"{path}: header must be 'relative_path,label', got {header}")

        known = set(MULTICLASS_LABELS) | set(BINARY_LABELS)
        samples: list[Sample] = []
        seen: set[str] = set()
        labels_used: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # ignore blank lines
            if len(row) != 2:
                raise DataError(f"{path} line {lineno}: expected 'relative_path,label', got {row}")
            rel, label = row[0].strip(), row[1].strip()
            if label not in known:
                raise DataError(f"{path} line {lineno}: unknown label '{label}' for '{rel}'")
            if rel in seen:
                raise DataError(f"{path} line {lineno}: duplicate path '{rel}'")
            if not (root / rel).is_file():
                raise DataError(f"{path} line {lineno}: image file not found: {root / rel}")
            seen.add(rel)
            labels_used.add(label)
            samples.append(Sample(image_path=rel, label=label))

    if "faulty" in labels_used and labels_used & set(FAULT_SUBTYPES):
        raise DataError(f"{path}: mixes binary label 'faulty' with multiclass fault labels")
    taxonomy = "binary" if "faulty" in labels_used else "multiclass"
    return Dataset(samples=samples, taxonomy=taxonomy, manifest_path=path, root=root)


def write_manifest(ds: Dataset, path) -> None:
    """Write a dataset back out in manifest format (deterministic bytes)."""
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("relative_path,label\n")
        for s in ds.samples:
            fh.write(f"{s.image_path},{s.label}\n")


def bilinear_resize(img: np.ndarray, out_hw) -> np.ndarray:
    """Separable bilinear resize of an [H,W,...] array (half-pixel centers,
    edges clamped). Written here rather than delegated so the resize is a
    deterministic, testable function of the pixel values alone."""
    out_h, out_w = (int(v) for v in out_hw)
    if out_h < 1 or out_w < 1:
        raise DataError(f"target size must be positive, got {out_hw}")

    def interp(arr, n_out, axis):
        n_in = arr.shape[axis]
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(arr.dtype)
        shape = [1] * arr.ndim
        shape[axis] = n_out
        frac = frac.reshape(shape)
        return np.take(arr, lo, axis=axis) * (1 - frac) + np.take(arr, hi, axis=axis) * frac

    out = interp(img, out_h, 0)
    return interp(out, out_w, 1)


def decode_and_resize(image_path, target_hw) -> np.ndarray:
    """Decode a PNG/JPEG file, resize bilinearly, return float32 [3,H,W] in [0,1]."""
    try:
        with Image.open(image_path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {image_path}: {exc}") from exc
    if arr.size == 0:
        raise DataError(f"zero-area image: {image_path}")
    resized = bilinear_resize(arr, target_hw)
    return np.ascontiguousarray(resized.transpose(2, 0, 1))


def normalize(x: np.ndarray, mean, std) -> np.ndarray:
    """(x - mean) / std per channel; works on [C,H,W] and [N,C,H,W]."""
    mean = np.asarray(mean, dtype=x.dtype)
    std = np.asarray(std, dtype=x.dtype)
    if (std <= 0).any():
        raise ValueError(f"std entries must be positive, got {std}")
    shape = (-1, 1, 1)
    return (x - mean.reshape(shape)) / std.reshape(shape)


def denormalize(x: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=x.dtype)
    std = np.asarray(std, dtype=x.dtype)
    return x * std.reshape(-1, 1, 1) + mean.reshape(-1, 1, 1)


def hflip(x: np.ndarray) -> np.ndarray:
    """Mirror a [...,W] image about its vertical axis; exact involution."""
    return x[..., ::-1].copy()


def warp_rotate_translate(x: np.ndarray, angle_deg: float, shift_rows: float,
                          shift_cols: float) -> np.ndarray:
    """Rotate about the image center then translate, bilinear with
    edge-replicated (clamped) sampling. x is [C,H,W]."""
    c, h, w = x.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
    # inverse map: undo the translation, then rotate backwards about the center
    ry = rows - shift_rows - cy
    rx = cols - shift_cols - cx
    src_r = cos_t * ry + sin_t * rx + cy
    src_c = -sin_t * ry + cos_t * rx + cx

    src_r = np.clip(src_r, 0.0, h - 1.0)
    src_c = np.clip(src_c, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0).astype(x.dtype)
    fc = (src_c - c0).astype(x.dtype)

    out = (
        x[:, r0, c0] * (1 - fr) * (1 - fc)
        + x[:, r0, c1] * (1 - fr) * fc
        + x[:, r1, c0] * fr * (1 - fc)
        + x[:, r1, c1] * fr * fc
    )
    return np.clip(out, 0.0, 1.0).astype(x.dtype)


def augment(x: np.ndarray, label, rng: np.random.Generator):
    """Random horizontal flip (p=0.5), rotation in +-10 degrees, translation up
    to +-5% per axis. Shape, label, and the [0,1] value range are preserved;
    the caller seeds ``rng`` (the trainer uses (seed, epoch, sample index))."""
    flip = rng.random() < 0.5
    angle = rng.uniform(-10.0, 10.0)
    _, h, w = x.shape
    shift_rows = rng.uniform(-0.05, 0.05) * h
    shift_cols = rng.uniform(-0.05, 0.05) * w
    if flip:
        x = hflip(x)
    return warp_rotate_translate(x, angle, shift_rows, shift_cols), label


def relabel_binary(ds: Dataset) -> Dataset:
    """Collapse the fault subtypes into a single 'faulty' class."""
    if ds.taxonomy != "multiclass":
        raise DataError("dataset is already binary")
    samples = [
        replace(s, label="normal" if s.label == "normal" else "faulty") for s in ds.samples
    ]
    return Dataset(samples=samples, taxonomy="binary", manifest_path=ds.manifest_path,
                   root=ds.root)


def stratified_split(ds: Dataset, train_fraction: float = 0.7, seed: int = 0):
    """Per-class shuffle-and-cut split; returns (train, test) datasets.

    Train takes round-half-up(fraction * class size) of each class; the
    remainder goes to test. Deterministic for a fixed seed (see module
    docstring for the exact PRNG contract).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")

    by_class: dict[str, list[int]] = {}
    for i, s in enumerate(ds.samples):
        by_class.setdefault(s.label, []).append(i)
    for label, idxs in by_class.items():
        if len(idxs) < 2:
            raise DataError(f"class '{label}' has {len(idxs)} sample(s); need at least 2 to split")

    shuffler = random.Random(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in ds.class_names:  # fixed taxonomy order, not dict order
        if label not in by_class:
            continue
        idxs = list(by_class[label])
        shuffler.shuffle(idxs)
        n_train = int(math.floor(train_fraction * len(idxs) + 0.5))
        train_idx.extend(idxs[:n_train])
        test_idx.extend(idxs[n_train:])

    def subset(indices, tag):
        picked = [replace(ds.samples[i], split_tag=tag) for i in sorted(indices)]
        return Dataset(samples=picked, taxonomy=ds.taxonomy, manifest_path=ds.manifest_path,
                       root=ds.root)

    return subset(train_idx, "train"), subset(test_idx, "test")


@dataclass
class ArraySet:
    """A dataset materialized into memory: decoded [0,1] images plus labels."""

    images: np.ndarray  # [N,3,H,W] float32 in [0,1]
    labels: np.ndarray  # [N] int64 indices into class_names
    class_names: tuple[str, ...]
    sample_paths: list[str] = field(default_factory=list)

    def __len__(self):
        return self.images.shape[0]


def materialize(ds: Dataset, image_hw=(128, 128)) -> ArraySet:
    """Decode every sample to a fixed-size tensor stack."""
    if len(ds) == 0:
        raise DataError("cannot materialize an empty dataset")
    h, w = (int(v) for v in image_hw)
    images = np.empty((len(ds), 3, h, w), dtype=np.float32)
    labels = np.empty(len(ds), dtype=np.int64)
    for i, s in enumerate(ds.samples):
        images[i] = decode_and_resize(ds.resolve(s), (h, w))
        labels[i] = ds.label_index(s.label)
    return ArraySet(images=images, labels=labels, class_names=ds.class_names,
                    sample_paths=[s.image_path for s in ds.samples])


def compute_norm_stats(images: np.ndarray):
    """Per-channel mean/std over a [N,C,H,W] stack, computed in float64.

    Standard deviations are floored at 1e-6 so constant channels stay usable.
    """
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    std = np.maximum(std, 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)
