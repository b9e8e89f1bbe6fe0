"""Build each of the four architectures, inspect them, and gradient-check one.

Run:  python3 demos/02_architectures_and_gradcheck.py
"""

import numpy as np

from pvfault import ARCH_IDS, build_model, model_gradcheck

print("architecture zoo at 3x32x32 input:\n")
for arch in ARCH_IDS:
    classes = 2 if arch == "espinosa-binary" else 4
    model = build_model(arch, classes, (3, 32, 32), seed=0)
    chain = " -> ".join(name for name, _ in model.named_layers)
    print(f"{arch} ({classes} classes, {model.count_parameters():,} parameters)")
    print(f"  {chain}\n")

# the reduced model keeps a strict subset of the convolutional stack
full = build_model("proposed-3conv", 4, (3, 32, 32))
reduced = build_model("ablated-2conv", 4, (3, 32, 32))
print(
    f"conv-stack parameters: proposed {full.conv_stack_parameters():,} "
    f"> ablated {reduced.conv_stack_parameters():,}"
)

# verify the hand-derived backward passes against central finite differences
print("\ngradient check (float64, batch of 2 at 32x32):")
model = build_model("proposed-3conv", 4, (3, 32, 32), seed=1, dtype=np.float64)
rng = np.random.default_rng(2)
images = rng.random((2, 3, 32, 32))
labels = rng.integers(0, 4, size=2)
report = model_gradcheck(model, images, labels, tolerance=1e-4)
for line in report.format_lines():
    print(" ", line)
