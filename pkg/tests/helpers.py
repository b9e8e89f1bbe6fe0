"""Shared fixtures-in-spirit: synthetic datasets used across test modules."""

import numpy as np
from PIL import Image

from pvfault.data import ArraySet


def separable_arrayset(n_per_class=8, hw=16, seed=0, jitter=0.03):
    """Solid dark vs solid bright images: trivially separable two-class data.

    A correct training loop must be able to memorize this set.
    """
    rng = np.random.default_rng(seed)
    images = []
    labels = []
    for label, base in ((0, 0.15), (1, 0.85)):
        for _ in range(n_per_class):
            img = np.full((3, hw, hw), base, dtype=np.float32)
            img += rng.normal(0, jitter, size=img.shape).astype(np.float32)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
    return ArraySet(
        images=np.stack(images),
        labels=np.array(labels, dtype=np.int64),
        class_names=("normal", "faulty"),
    )


def make_tiny_dataset(root, per_class=3, size=12, binary=False):
    """Write solid per-class color images plus a manifest; returns its path."""
    colors = {
        "normal": (40, 40, 40),
        "cracked": (220, 40, 40),
        "dusty": (40, 220, 40),
        "shadowed": (40, 40, 220),
    }
    if binary:
        colors = {"normal": (40, 40, 40), "faulty": (220, 220, 220)}
    rows = []
    rng = np.random.default_rng(0)
    for label, color in colors.items():
        (root / label).mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            jitter = tuple(int(np.clip(c + rng.integers(-15, 16), 0, 255)) for c in color)
            rel = f"{label}/{i}.png"
            Image.new("RGB", (size, size), jitter).save(root / rel)
            rows.append(f"{rel},{label}")
    manifest = root / "all.csv"
    manifest.write_text("relative_path,label\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return manifest
