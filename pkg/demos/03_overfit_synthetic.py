"""Train the three-block model to memorize a tiny separable dataset.

Dark images are labeled normal and bright ones faulty; a working training
loop drives train accuracy to 1.0 within a few epochs. Metrics land in
demos/output/overfit/.

Run:  python3 demos/03_overfit_synthetic.py
"""

from pathlib import Path

import numpy as np

from pvfault import ArraySet, TrainConfig, build_model, emit_curves, evaluate, train

OUT = Path(__file__).parent / "output" / "overfit"


def separable_set(n_per_class=8, hw=32, seed=0):
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, base in ((0, 0.15), (1, 0.85)):
        for _ in range(n_per_class):
            img = np.full((3, hw, hw), base, dtype=np.float32)
            img += rng.normal(0, 0.03, size=img.shape).astype(np.float32)
            images.append(np.clip(img, 0, 1))
            labels.append(label)
    return ArraySet(np.stack(images), np.array(labels), ("normal", "faulty"))


data = separable_set()
model = build_model("proposed-3conv", 2, (3, 32, 32), seed=0)
config = TrainConfig(epochs=15, batch_size=8, seed=0, augment=False)

log = train(model, data, data, config)
for r in log.records:
    print(
        f"epoch {r.epoch:2d}  train loss {r.train_loss:.4f}  train acc {r.train_acc:.3f}  "
        f"test acc {r.test_acc:.3f}"
    )

report = evaluate(model, data)
print()
for line in report.format_lines():
    print(line)

csv_path, svg_path = emit_curves(log, OUT)
print(f"\nwrote {csv_path} and {svg_path}")
