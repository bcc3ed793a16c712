"""Alternating concept generation / SGD loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import EmbeddingSet, gcd_counts
from .evaluation import estimate_k, gcd_acc, merge_to_k
from .infomap import Partition, semi_infomap
from .knn_select import select_knn
from .losses import loss_total
from .memory import ConceptMemory, ExpertConfig, derive_experts, init_memory
from .model import Batch, Hyper, ModelParams

log = logging.getLogger(__name__)

LOG_FIELDS = [
    "epoch", "step", "loss_total", "loss_con", "loss_cls", "loss_c", "loss_t",
    "kg1", "kg2", "kg3", "lr", "tau_t",
]
EPOCH_FIELDS = ["epoch", "all_acc", "old_acc", "new_acc", "k_est", "kg1", "kg2", "kg3"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr0: float = 0.05
    seed: int = 0
    k_u_known: bool = False
    k: Optional[int] = None
    knn: Optional[int] = None
    dim: Optional[int] = None
    trials: int = 3
    hyper: Hyper = field(default_factory=Hyper)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr0 < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.k_u_known and not self.k:
            raise ValueError("k_u_known requires k")
        self.hyper.validate()


def cosine_lr(lr0: float, t: int, total: int) -> float:
    if total <= 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * t / total)) / 2.0


@dataclass
class EpochState:
    epoch: int
    partitions: dict[int, Partition]
    memories: dict[int, ConceptMemory]
    lr: float = 0.0
    tau_t: float = 0.0
    losses: list = field(default_factory=list)

    def kg(self, r: int) -> int:
        return self.partitions[r].k if r in self.partitions else 0


def inference_features(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Base expert's projected space, the space its concepts are discovered in."""
    return params.expert_features(1, x)


def discover(data: EmbeddingSet, params: ModelParams, knn: int, delta: float,
             seed: int = 0, trials: int = 3) -> Partition:
    """Semi-Infomap over every row in the base expert's space (the inference partition)."""
    return semi_infomap(inference_features(params, data.rows), data.labels, knn, delta, seed, trials)


def epoch_setup(epoch: int, data: EmbeddingSet, params: ModelParams, experts: ExpertConfig,
                hyper: Hyper, seed: int = 0, trials: int = 3) -> EpochState:
    """Regenerate each expert's concepts and prototype bank from clean inputs.

    At epoch 0 the heads are untrained, so clustering runs on encoder output;
    prototypes always live in the expert's projected space.
    """
    z = params.encode(data.rows)
    parts, mems = {}, {}
    for r in hyper.experts:
        v = params.expert_head(r, z)[0]
        feats = z if epoch == 0 else v
        part = semi_infomap(feats, data.labels, experts.ks[r - 1], hyper.delta, seed, trials)
        parts[r] = part
        mems[r] = init_memory(part, v, expert_id=r)
    return EpochState(epoch, parts, mems)


def augment(x: np.ndarray, sigma: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    return x + (sigma * scale / math.sqrt(x.shape[1])) * rng.standard_normal(x.shape)


def sample_concept_batch(part: Partition, n_c: int, n_i: int, rng: np.random.Generator):
    """Row indices for n_c concepts x n_i instances (with replacement only when a concept is small)."""
    members = part.members
    chosen = rng.choice(len(members), size=min(n_c, len(members)), replace=False)
    rows = []
    for c in np.sort(chosen):
        m = members[c]
        rows.append(rng.choice(m, size=n_i, replace=len(m) < n_i))
    return np.concatenate(rows)


def make_batch(data: EmbeddingSet, idx: np.ndarray, state: EpochState, hyper: Hyper,
               scale: float, rng: np.random.Generator, with_concepts: bool) -> Batch:
    x = data.rows[idx]
    x1 = augment(x, hyper.sigma_aug, scale, rng)
    x2 = augment(x, hyper.sigma_aug, scale, rng)
    xc = concepts = cidx = None
    if with_concepts:
        cidx = sample_concept_batch(state.partitions[1], hyper.n_c, hyper.n_i, rng)
        xc = augment(data.rows[cidx], hyper.sigma_aug, scale, rng)
        concepts = np.zeros((3, len(cidx)), dtype=np.int64)
        for r, mem in state.memories.items():
            concepts[r - 1] = mem.concept_of[cidx]
    return Batch(x1, x2, data.labels[idx], xc, concepts, cidx)


def train_step(state: EpochState, batch: Batch, params: ModelParams, config: TrainConfig,
               lr: float, epoch: int):
    """One SGD step on the total loss followed by momentum updates of sampled prototypes."""
    hyper = config.hyper
    mems = [state.memories[r] for r in sorted(state.memories)]
    value, grads, parts = loss_total(batch, params, mems, hyper, config.k_u_known, epoch)
    if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingError(f"non-finite loss at epoch {epoch}: {parts}")
    projected = {}
    if batch.xc is not None:
        z = params.encode(batch.xc)
        projected = {r: params.expert_head(r, z)[0] for r in state.memories}
    for k, g in grads.items():
        params.tensors[k] = params.tensors[k] - lr * g
    if hyper.use_crl:
        for r, v in projected.items():
            mem = state.memories[r]
            for c, vi in zip(batch.concepts[r - 1], v):
                mem.update(int(c), vi, hyper.eta)
    return params, value, parts


@dataclass
class TrainResult:
    params: ModelParams
    experts: Optional[ExpertConfig]
    partitions: dict[int, Partition]
    final_partition: Optional[Partition]
    log: list[dict] = field(default_factory=list)
    epoch_log: list[dict] = field(default_factory=list)

    def write_log(self, path) -> None:
        _write_csv(path, LOG_FIELDS, self.log)

    def write_epoch_log(self, path) -> None:
        _write_csv(path, EPOCH_FIELDS, self.epoch_log)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _eval_row(epoch, data, part, state):
    row = {"epoch": epoch, "all_acc": "", "old_acc": "", "new_acc": "", "k_est": estimate_k(part)}
    if data.has_ground_truth:
        rep = gcd_acc(data, part)
        row.update(all_acc=rep.all_acc, old_acc=rep.old_acc, new_acc=rep.new_acc)
    for r in (1, 2, 3):
        row[f"kg{r}"] = state.kg(r) if state else 0
    return row


def run(data: EmbeddingSet, config: TrainConfig, params: Optional[ModelParams] = None,
        evaluate: bool = True) -> TrainResult:
    """Train for ``config.epochs`` epochs; deterministic for a fixed seed."""
    config.validate()
    hyper = config.hyper
    n = len(data)
    _, _, k_l, _ = gcd_counts(data)
    width = config.k if config.k_u_known else k_l
    if params is None:
        params = ModelParams.init(data.dim, config.dim or data.dim, width, seed=config.seed)
    if config.epochs == 0:
        return TrainResult(params, None, {}, None)

    k1 = config.knn
    if k1 is None:
        k1 = select_knn(data, params.encode(data.rows), hyper.delta, config.seed).chosen
    experts = derive_experts(k1, hyper.scale_r, n)
    log.info("expert neighborhoods: %s", experts.ks)

    rng = np.random.default_rng(config.seed)
    scale = float(np.mean(np.linalg.norm(data.rows, axis=1)))
    steps = max(1, n // config.batch_size)
    total = config.epochs * steps
    with_concepts = hyper.use_crl and hyper.alpha > 0
    result = TrainResult(params, experts, {}, None)
    t = 0
    state = None
    for epoch in range(config.epochs):
        state = epoch_setup(epoch, data, params, experts, hyper, config.seed, config.trials)
        if evaluate:
            part = state.partitions.get(1) or discover(
                data, params, k1, hyper.delta, config.seed, config.trials)
            result.epoch_log.append(_eval_row(epoch, data, part, state))
        perm = rng.permutation(n)
        tau_t = hyper.tau_t(epoch)
        for s in range(steps):
            idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
            lr = cosine_lr(config.lr0, t, total)
            batch = make_batch(data, idx, state, hyper, scale, rng, with_concepts)
            params, value, parts = train_step(state, batch, params, config, lr, epoch)
            result.log.append({
                "epoch": epoch, "step": t, "loss_total": value, **parts,
                "kg1": state.kg(1), "kg2": state.kg(2), "kg3": state.kg(3),
                "lr": lr, "tau_t": tau_t,
            })
            t += 1

    result.params = params
    result.partitions = dict(state.partitions)
    final = discover(data, params, k1, hyper.delta, config.seed, config.trials)
    if config.k_u_known and config.k and final.k > config.k:
        final = merge_to_k(final, inference_features(params, data.rows), config.k)
    result.final_partition = final
    if evaluate:
        result.epoch_log.append(_eval_row(config.epochs, data, final, state))
    return result
