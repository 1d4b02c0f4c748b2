"""
Spherical k-means and clustering metrics
=========================================

"""

# %%
import numpy as np

from pipcdr import ami, ari, clustering_accuracy, imbalance_ratio, make_rng, nmi, spherical_kmeans, std_uniformity
from pipcdr.data import gen_gaussian_mixture

data = gen_gaussian_mixture(5, 60, 16, separation=8.0, noise=1.0, rng=make_rng(1))
print(data.n, data.dim, data.n_classes)

# %%
pl = spherical_kmeans(data.features, 5, make_rng(2))
print("inertia per iteration", np.round(pl.history, 3))

# %%
truth, pred = data.labels, pl.assign
print(f"nmi={nmi(truth, pred):.3f} ami={ami(truth, pred):.3f} ari={ari(truth, pred):.3f} "
      f"acc={clustering_accuracy(truth, pred):.3f}")

# %%
# Accuracy ignores label names, so a permuted prediction scores the same.
perm = np.array([3, 0, 4, 1, 2])
print(clustering_accuracy(truth, perm[pred]))

# %%
# Random labelings sit near zero on the chance-adjusted scores.
r = np.random.default_rng(0).integers(0, 5, data.n)
print(f"random: ami={ami(truth, r):.3f} ari={ari(truth, r):.3f} nmi={nmi(truth, r):.3f}")

# %%
# Imbalance of one crowded cluster versus a balanced split.
print(imbalance_ratio(np.r_[np.zeros(250, int), np.arange(50) % 4 + 1], 5), imbalance_ratio(truth, 5))

# %%
# Std of normalized coordinates: 1/sqrt(d) when spread out, near zero when collapsed.
z = np.random.default_rng(3).standard_normal((5000, 16))
print(std_uniformity(z), 1 / np.sqrt(16), std_uniformity(np.ones((100, 16)) + 1e-3 * z[:100]))
