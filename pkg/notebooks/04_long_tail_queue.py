"""
Long-tailed data and the memory queue
======================================

"""

# %%
import numpy as np

from pipcdr import MemoryQueue, cluster_pool, make_rng, queue_push
from pipcdr.data import gen_gaussian_mixture, long_tail_subsample
from pipcdr.trainer import TrainConfig, train

base = gen_gaussian_mixture(6, 80, 16, separation=8.0, noise=1.0, rng=make_rng(0))
tail = long_tail_subsample(base, 0.1, make_rng(1))
print(np.bincount(tail.labels), tail.meta)

# %%
# The queue keeps the most recent rows; ages are insertion stamps.
q = MemoryQueue(5)
for t in range(3):
    queue_push(q, np.full((2, 3), float(t)))
print(q.matrix()[:, 0], q.ages)
print(cluster_pool(np.zeros((1, 3)), q).shape)

# %%
cfg = TrainConfig(K=6, epochs=40, warmup_epochs=5, batch_size=32, seed=0)
for cap in (0, 128):
    _, hist = train(tail, cfg.replace(queue_capacity=cap))
    r = hist[-1]
    print(f"queue={cap:3d} acc={r.acc:.3f} nmi={r.nmi:.3f} imbalance={r.imbalance_ratio:.3f}")
