"""End-to-end walk through the file-based pipeline on a generated toy dataset.

Writes a folder of images plus manifest, splits it 70/30, trains briefly,
evaluates the checkpoint, and classifies a single image - the same flow the
`pvfault` command line drives, here via the library API. Everything lands in
demos/output/pipeline/.

Run:  python3 demos/04_full_pipeline.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

from pvfault import (
    TrainConfig,
    build_model,
    decode_and_resize,
    evaluate,
    load_checkpoint,
    load_manifest,
    materialize,
    normalize,
    relabel_binary,
    save_checkpoint,
    stratified_split,
    train,
    write_manifest,
)

OUT = Path(__file__).parent / "output" / "pipeline"
DATA = OUT / "data"
IMAGE_SIZE = 24

# --- 1. a toy image folder + manifest -----------------------------------------
print("1. generating a toy dataset")
rng = np.random.default_rng(0)
rows = []
base_colors = {
    "normal": (30, 30, 60),
    "cracked": (200, 60, 60),
    "dusty": (60, 200, 60),
    "shadowed": (60, 60, 200),
}
for label, color in base_colors.items():
    (DATA / label).mkdir(parents=True, exist_ok=True)
    for i in range(8):
        jitter = tuple(int(np.clip(c + rng.integers(-20, 21), 0, 255)) for c in color)
        rel = f"{label}/{i}.png"
        Image.new("RGB", (IMAGE_SIZE, IMAGE_SIZE), jitter).save(DATA / rel)
        rows.append(f"{rel},{label}")
manifest = DATA / "all.csv"
manifest.write_text("relative_path,label\n" + "\n".join(rows) + "\n", encoding="utf-8")
print(f"   {len(rows)} images under {DATA}")

# --- 2. load, relabel to binary, split 70/30 ----------------------------------
print("2. stratified 70/30 split (binary labels)")
dataset = relabel_binary(load_manifest(manifest))
train_ds, test_ds = stratified_split(dataset, 0.7, seed=7)
write_manifest(train_ds, OUT / "train.csv")
write_manifest(test_ds, OUT / "test.csv")
print(f"   train {train_ds.counts()}, test {test_ds.counts()}")

# --- 3. train ------------------------------------------------------------------
print("3. training proposed-3conv")
train_data = materialize(train_ds, (IMAGE_SIZE, IMAGE_SIZE))
test_data = materialize(test_ds, (IMAGE_SIZE, IMAGE_SIZE))
model = build_model("proposed-3conv", 2, (3, IMAGE_SIZE, IMAGE_SIZE), seed=7)
log = train(model, train_data, test_data, TrainConfig(epochs=8, batch_size=8, seed=7))
print(f"   final train acc {log.records[-1].train_acc:.3f}, "
      f"test acc {log.records[-1].test_acc:.3f}")

# --- 4. checkpoint round trip ---------------------------------------------------
print("4. checkpoint round trip")
ckpt = OUT / "model.ckpt"
save_checkpoint(model, ckpt)
restored = load_checkpoint(ckpt, expect_arch="proposed-3conv")
print(f"   saved and reloaded {ckpt.name} "
      f"({ckpt.stat().st_size:,} bytes, arch {restored.arch})")

# --- 5. evaluate + single-image prediction --------------------------------------
print("5. evaluation report")
for line in evaluate(restored, test_data).format_lines():
    print("   " + line)

sample = test_ds.samples[0]
image = decode_and_resize(test_ds.resolve(sample), (IMAGE_SIZE, IMAGE_SIZE))
probs = restored.forward(
    normalize(image[None, ...], restored.norm_mean, restored.norm_std), train=False
)[0]
labels = ("normal", "faulty")
print(f"6. prediction for {sample.image_path} (true: {sample.label}): "
      f"{labels[int(probs.argmax())]} "
      f"({', '.join(f'{l}={p:.3f}' for l, p in zip(labels, probs))})")
