"""
Contrastive and alignment losses on toy embeddings
===================================================

Small hand-made batches, printed loss values, and the reductions that
tie the cluster-level losses back to their instance-level versions.
"""

# %%
import numpy as np

from pipcdr import (ViewPair, alignment_byol, cdr_surrogate, decoupled_info_nce, info_nce, l2_normalize_rows,
                    pip_mix, psa_mix, make_rng)

rng = np.random.default_rng(0)
za = l2_normalize_rows(rng.standard_normal((6, 4)))
zb = l2_normalize_rows(za + 0.1 * rng.standard_normal((6, 4)))
pair = ViewPair(za, zb)

# %%
# Two views that nearly agree give a small alignment term.
print("alignment", alignment_byol(za, zb).value)
print("alignment, shuffled partner", alignment_byol(za, zb[::-1]).value)

# %%
# InfoNCE versus its decoupled form at a few temperatures.
for tau in (0.1, 0.5, 1.0):
    d = decoupled_info_nce(pair, tau)
    print(f"tau={tau}: info_nce={info_nce(pair, tau).value:.4f}  "
          f"align={d.terms['alignment']:.4f}  uniform={d.terms['uniformity']:.4f}")

# %%
# With every instance in its own cluster, the dispersion surrogate is the decoupled loss.
print(cdr_surrogate(pair, np.arange(6), 0.5).value, decoupled_info_nce(pair, 0.5).value)

# Grouping rows into clusters removes same-cluster negatives from the denominator.
print(cdr_surrogate(pair, np.array([0, 0, 0, 1, 1, 1]), 0.5).value)

# %%
# Proximity mixing moves each row a small step toward its batch neighbor,
# Gaussian mixing moves it in a random direction.
v = pip_mix(za, 0.1)
w = psa_mix(za, 0.1, make_rng(0))
print("pip shift", np.linalg.norm(v - za, axis=1).round(4))
print("gaussian shift", np.linalg.norm(w - za, axis=1).round(4))
