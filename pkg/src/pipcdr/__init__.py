"""Deep clustering with positive-proximity alignment and a cluster dispersion regularizer."""
from .clustering import MemoryQueue, PseudoLabeling, assign_batch, cluster_pool, queue_push, spherical_kmeans
from .data import AugmentSpec, Dataset, augment, gen_gaussian_mixture, load_csv, long_tail_subsample
from .losses import (LossOut, ViewPair, alignment_byol, cdr_surrogate, combined_loss, decoupled_info_nce,
                     info_nce, nearest_neighbor_index, pip_loss, pip_mix, psa_mix, supervised_contrastive)
from .metrics import (MetricsReport, Partition, ami, ari, clustering_accuracy, imbalance_ratio, nmi,
                      preservation_rate, std_uniformity)
from .networks import Mlp, MlpSpec, NetworkStack, ema_update, sgd_step
from .numerics import cosine_sim, l2_normalize_rows, make_rng, pairwise_cosine
from .trainer import TrainConfig, TrainState, first_m_step, second_m_step, train

__version__ = "0.1.0"
