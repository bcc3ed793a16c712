"""Dataset representation, GCD splits, synthetic hierarchies and file I/O."""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"MGCE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBII")


class DataError(ValueError):
    """Raised when an embedding or labels file is malformed or inconsistent."""


class Split(enum.Enum):
    LABELED_KNOWN = "L"
    UNLABELED_KNOWN = "UK"
    UNLABELED_NOVEL = "UN"


@dataclass(frozen=True)
class Sample:
    id: int
    label: Optional[int]
    split: Split
    # ground truth for unlabeled rows; only used by evaluation
    true_label: Optional[int] = None

    @property
    def labeled(self) -> bool:
        return self.split is Split.LABELED_KNOWN

    @property
    def target(self) -> Optional[int]:
        """Class id usable for evaluation (label if labeled, else ground truth)."""
        return self.label if self.labeled else self.true_label


@dataclass
class EmbeddingSet:
    rows: np.ndarray
    samples: list[Sample]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DataError("embedding matrix must be 2-D")
        if self.rows.shape[1] < 2:
            raise DataError("embedding dim must be >= 2")
        if self.rows.shape[0] != len(self.samples):
            raise DataError(
                f"row-count mismatch: {self.rows.shape[0]} rows vs {len(self.samples)} samples"
            )
        if not np.all(np.isfinite(self.rows)):
            raise DataError("non-finite embedding")
        for s in self.samples:
            if s.labeled and s.label is None:
                raise DataError(f"missing label for labeled sample {s.id}")
            if not s.labeled and s.label is not None:
                raise DataError(f"unlabeled sample {s.id} carries a training label")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def labeled_mask(self) -> np.ndarray:
        return np.array([s.labeled for s in self.samples], dtype=bool)

    @property
    def labels(self) -> np.ndarray:
        """Training labels; -1 where the row is unlabeled."""
        return np.array([s.label if s.labeled else -1 for s in self.samples], dtype=np.int64)

    @property
    def targets(self) -> np.ndarray:
        """Evaluation labels; -1 where no ground truth is known."""
        return np.array(
            [-1 if s.target is None else s.target for s in self.samples], dtype=np.int64
        )

    @property
    def has_ground_truth(self) -> bool:
        return all(s.target is not None for s in self.samples)

    def split_mask(self, split: Split) -> np.ndarray:
        return np.array([s.split is split for s in self.samples], dtype=bool)


@dataclass(frozen=True)
class SyntheticSpec:
    n_super: int = 2
    classes_per_super: int = 5
    subclasses_per_class: int = 2
    samples_per_subclass: int = 20
    dim: int = 32
    sigma_within: float = 0.5
    sigma_sub: float = 1.0
    sigma_class: float = 2.0
    seed: int = 0
    # >0: subclass offsets of every class lie in one shared random subspace of
    # this size, so collapsing them is learnable from known classes alone
    nuisance_dim: int = 0

    def validate(self) -> None:
        counts = (
            self.n_super,
            self.classes_per_super,
            self.subclasses_per_class,
            self.samples_per_subclass,
        )
        if min(counts) < 1:
            raise ValueError("all synthetic counts must be >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not (0 <= self.sigma_within < self.sigma_sub < self.sigma_class):
            raise ValueError("need sigma_within < sigma_sub < sigma_class")
        if not 0 <= self.nuisance_dim <= self.dim:
            raise ValueError("nuisance_dim must be in [0, dim]")


def generate_synthetic(spec: SyntheticSpec) -> EmbeddingSet:
    """Draw a superclass > class > subclass Gaussian hierarchy with a GCD split.

    The first ceil(K/2) classes are known; half of each known class (rounded
    down, lowest row index first) is labeled. Rows are rescaled to unit mean
    norm, which leaves the cosine geometry untouched.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.n_super * spec.classes_per_super
    n_known = math.ceil(n_classes / 2)
    per_class = spec.subclasses_per_class * spec.samples_per_subclass

    # superclass centers sit on a sphere well outside the class spread
    supers = rng.standard_normal((spec.n_super, spec.dim))
    supers *= 2.0 * spec.sigma_class * math.sqrt(spec.dim) / np.linalg.norm(supers, axis=1, keepdims=True)

    if spec.nuisance_dim:
        basis = np.linalg.qr(rng.standard_normal((spec.dim, spec.nuisance_dim)))[0]
    else:
        basis = np.eye(spec.dim)

    rows = []
    class_of = []
    for s in range(spec.n_super):
        for c in range(spec.classes_per_super):
            cls = s * spec.classes_per_super + c
            center = supers[s] + spec.sigma_class * rng.standard_normal(spec.dim)
            for _ in range(spec.subclasses_per_class):
                sub = center + spec.sigma_sub * basis @ rng.standard_normal(basis.shape[1])
                pts = sub + spec.sigma_within * rng.standard_normal(
                    (spec.samples_per_subclass, spec.dim)
                )
                rows.append(pts)
                class_of.extend([cls] * spec.samples_per_subclass)
    x = np.concatenate(rows, axis=0)
    x /= np.linalg.norm(x, axis=1).mean()
    class_of = np.asarray(class_of)

    samples = []
    seen = np.zeros(n_classes, dtype=np.int64)
    for i, cls in enumerate(class_of):
        cls = int(cls)
        if cls < n_known:
            if seen[cls] < per_class // 2:
                samples.append(Sample(i, cls, Split.LABELED_KNOWN, cls))
            else:
                samples.append(Sample(i, None, Split.UNLABELED_KNOWN, cls))
            seen[cls] += 1
        else:
            samples.append(Sample(i, None, Split.UNLABELED_NOVEL, cls))
    return EmbeddingSet(x, samples)


def gcd_counts(data: EmbeddingSet) -> tuple[int, int, int, Optional[int]]:
    """Return ``(N, M, K_L, K_U)``; ``K_U`` is None without ground truth."""
    labeled = data.labeled_mask
    n = int(labeled.sum())
    m = len(data) - n
    k_l = len({s.label for s in data.samples if s.labeled})
    k_u = len({int(t) for t in data.targets}) if data.has_ground_truth else None
    return n, m, k_l, k_u


def densify_labels(samples: Sequence[Sample]) -> list[Sample]:
    """Remap class ids to 0..K-1 with labeled classes first (sorted within groups)."""
    known = sorted({s.label for s in samples if s.labeled})
    other = sorted({s.target for s in samples if s.target is not None} - set(known))
    remap = {c: i for i, c in enumerate(known + other)}
    out = []
    for s in samples:
        out.append(
            Sample(
                s.id,
                None if s.label is None else remap[s.label],
                s.split,
                None if s.true_label is None else remap[s.true_label],
            )
        )
    return out


# --- file I/O ---------------------------------------------------------------


def write_matrix(path, x: np.ndarray) -> None:
    x = np.ascontiguousarray(x, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, x.shape[0], x.shape[1]))
        fh.write(x.tobytes())


def read_matrix(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embeddings: {exc}") from None
    if len(raw) < _HEADER.size:
        raise DataError("truncated embedding header")
    magic, version, n, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError("bad magic")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * n * dim:
        raise DataError(f"payload holds {len(payload)} bytes, expected {4 * n * dim}")
    x = np.frombuffer(payload, dtype="<f4").reshape(n, dim).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite embedding")
    return x


def labels_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.csv")


def write_labels(path, samples: Sequence[Sample], ground_truth: bool = True) -> None:
    """Write ``id,label,split``; unlabeled rows carry a label only with ``ground_truth``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "split"])
        for s in samples:
            lab = s.target if (s.labeled or ground_truth) else None
            w.writerow([s.id, "" if lab is None else lab, s.split.value])


def read_labels(path) -> list[Sample]:
    samples = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read labels: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:3] != ["id", "label", "split"]:
            raise DataError("labels header must be id,label,split")
        for row in reader:
            try:
                split = Split(row["split"])
            except ValueError:
                raise DataError(f"unknown split {row['split']!r}") from None
            lab = row["label"].strip()
            value = int(lab) if lab else None
            if split is Split.LABELED_KNOWN:
                if value is None:
                    raise DataError(f"missing label for row {row['id']}")
                samples.append(Sample(int(row["id"]), value, split, value))
            else:
                samples.append(Sample(int(row["id"]), None, split, value))
    return samples


def save_embeddings(path, data: EmbeddingSet, ground_truth: bool = True) -> None:
    write_matrix(path, data.rows)
    write_labels(labels_path_for(path), data.samples, ground_truth)


def load_embeddings(path, labels_path=None) -> EmbeddingSet:
    """Read an embedding file and its companion labels CSV, checking consistency."""
    x = read_matrix(path)
    samples = read_labels(labels_path or labels_path_for(path))
    if len(samples) != x.shape[0]:
        raise DataError(f"row-count mismatch: {x.shape[0]} rows vs {len(samples)} labels")
    ids = [s.id for s in samples]
    if sorted(ids) != list(range(len(ids))):
        raise DataError("label ids must cover 0..n-1")
    order = np.argsort(ids)
    samples = densify_labels([samples[i] for i in order])
    data = EmbeddingSet(x, samples)
    k_l = gcd_counts(data)[2]
    for s in data.samples:
        if s.split is Split.UNLABELED_NOVEL and s.true_label is not None and s.true_label < k_l:
            raise DataError(f"novel row {s.id} references a labeled class")
        if s.split is Split.UNLABELED_KNOWN and s.true_label is not None and s.true_label >= k_l:
            raise DataError(f"known row {s.id} references an unlabeled class")
    return data
