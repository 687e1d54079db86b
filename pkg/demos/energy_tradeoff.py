"""How much L1 magnitude each sparsity structure keeps at 75% sparsity."""
import numpy as np

from nmgsparse.experiments import energy_samples

samples = energy_samples(768, 3072, 1, 4, groups=(1, 4, 16), seeds=3)
for (structure, g), vals in samples.items():
    label = f"{structure} g={g}" if g else structure
    print(f"{label:<16} {np.mean(vals):.4f}")
