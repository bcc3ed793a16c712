"""Multi-granularity concept discovery for generalized category discovery on embeddings."""
from .data import EmbeddingSet, Sample, Split, SyntheticSpec, generate_synthetic, load_embeddings, save_embeddings
from .evaluation import count_error_rate, estimate_k, gcd_acc, hungarian_acc
from .graph import build_graph, symmetrize
from .infomap import Partition, detect_communities, map_equation, semi_infomap
from .knn_select import select_knn
from .model import Hyper, ModelParams
from .trainer import TrainConfig, run

__version__ = "0.1.0"
