"""Walkthrough: estimating a stain basis and normalizing patches to it.

Builds two synthetic H&E-like patches with different stain vectors but the
same underlying tissue (concentration maps), then normalizes both to one
reference and shows that they land on (nearly) the same pixels.
"""
import numpy as np

from mitoforge.stain import (
    estimate_stain_basis,
    normalize_to_reference,
    rgb_to_od,
    synthesize_patch,
)

rng = np.random.default_rng(0)

# Two scanners, two stain chemistries: same tissue, different colors.
basis_a = np.array([[0.65, 0.07], [0.70, 0.99], [0.29, 0.11]])
basis_b = np.array([[0.55, 0.15], [0.75, 0.95], [0.36, 0.20]])
basis_a /= np.linalg.norm(basis_a, axis=0)
basis_b /= np.linalg.norm(basis_b, axis=0)

n = 64 * 64
conc = rng.uniform(0.05, 0.9, size=(n, 2))
pure = n // 20
conc[:pure, 1] = 0.0
conc[pure : 2 * pure, 0] = 0.0
conc = conc.reshape(64, 64, 2)

patch_a = synthesize_patch(basis_a, conc)
patch_b = synthesize_patch(basis_b, conc)
print("mean |a - b| before normalization:",
      np.abs(patch_a.astype(int) - patch_b.astype(int)).mean().round(2))

reference = estimate_stain_basis(rgb_to_od(patch_a))
print("estimated reference stain vectors:\n", reference.stain_vectors.round(4))
print("reference max concentrations:", reference.max_concentrations.round(4))

norm_a = normalize_to_reference(patch_a, reference)
norm_b = normalize_to_reference(patch_b, reference)
print("mean |a - b| after normalization: ",
      np.abs(norm_a.astype(int) - norm_b.astype(int)).mean().round(2))
print("max |a - b| after normalization:  ",
      np.abs(norm_a.astype(int) - norm_b.astype(int)).max())

print("\nbasis serializes to JSON for reuse across runs:")
print(reference.to_json())
