"""Trainable encoder, projection heads and classifier, with manual backprop.

Everything is float64 numpy; a ``ModelParams`` is a flat name -> array dict
so gradients share its keys.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.special import erf

N_EXPERTS = 3


@dataclass
class Hyper:
    lam: float = 0.35
    tau_u: float = 0.07
    tau_l: float = 1.0
    tau_s: float = 0.1
    tau_c: float = 0.05
    tau_t_start: float = 0.07
    tau_t_end: float = 0.04
    tau_t_epochs: int = 30
    epsilon: float = 2.0
    alpha: float = 0.1
    delta: float = 0.6
    scale_r: float = 0.6
    eta: float = 0.9
    sigma_aug: float = 0.05
    n_c: int = 8
    n_i: int = 16
    # ablation switches
    use_irl: bool = True
    use_crl: bool = True
    n_experts: int = N_EXPERTS
    use_collab: bool = True

    def validate(self) -> None:
        for name in ("tau_u", "tau_l", "tau_s", "tau_c", "tau_t_start", "tau_t_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.n_experts not in (1, N_EXPERTS):
            raise ValueError("n_experts must be 1 or 3")

    def tau_t(self, epoch: int) -> float:
        frac = min(epoch, self.tau_t_epochs) / self.tau_t_epochs if self.tau_t_epochs else 1.0
        return self.tau_t_start - (self.tau_t_start - self.tau_t_end) * frac

    @property
    def experts(self) -> list[int]:
        return list(range(1, self.n_experts + 1))

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def l2_normalize(x):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / norm, norm


def l2_normalize_backward(y, norm, dy):
    return (dy - y * np.sum(y * dy, axis=-1, keepdims=True)) / norm


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    s = x - x.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def softmax_backward(p, dp):
    return p * (dp - np.sum(p * dp, axis=-1, keepdims=True))


@dataclass
class ModelParams:
    tensors: dict = field(default_factory=dict)
    input_dim: int = 0
    dim: int = 0
    n_classes: int = 0

    @classmethod
    def init(cls, input_dim: int, dim: int, n_classes: int, seed: int = 0,
             hidden: Optional[int] = None, expert_hidden: Optional[int] = None) -> "ModelParams":
        rng = np.random.default_rng(seed)
        hidden = hidden or 2 * dim
        expert_hidden = expert_hidden or 4 * dim

        def dense(n_in, n_out):
            return rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)

        t = {}
        # identity-like start stands in for a pretrained backbone
        t["enc.W"] = np.eye(input_dim, dim) if input_dim == dim else dense(input_dim, dim)
        t["enc.b"] = np.zeros(dim)
        t["phi.W1"], t["phi.b1"] = dense(dim, hidden), np.zeros(hidden)
        t["phi.W2"], t["phi.b2"] = dense(hidden, dim), np.zeros(dim)
        t["cls.W"], t["cls.b"] = dense(dim, n_classes), np.zeros(n_classes)
        for r in range(1, N_EXPERTS + 1):
            t[f"exp{r}.W1"], t[f"exp{r}.b1"] = dense(dim, expert_hidden), np.zeros(expert_hidden)
            t[f"exp{r}.W2"], t[f"exp{r}.b2"] = dense(expert_hidden, dim), np.zeros(dim)
        return cls(t, input_dim, dim, n_classes)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()},
                           self.input_dim, self.dim, self.n_classes)

    def __getitem__(self, key):
        return self.tensors[key]

    # --- forward pieces ------------------------------------------------

    def encode(self, x):
        return x @ self["enc.W"] + self["enc.b"]

    def encode_backward(self, x, dz, grads):
        grads["enc.W"] += x.T @ dz
        grads["enc.b"] += dz.sum(axis=0)

    def instance_head(self, z):
        pre = z @ self["phi.W1"] + self["phi.b1"]
        hid = gelu(pre)
        out = hid @ self["phi.W2"] + self["phi.b2"]
        h, norm = l2_normalize(out)
        return h, (z, pre, hid, h, norm)

    def instance_head_backward(self, cache, dh, grads):
        z, pre, hid, h, norm = cache
        dout = l2_normalize_backward(h, norm, dh)
        grads["phi.W2"] += hid.T @ dout
        grads["phi.b2"] += dout.sum(axis=0)
        dpre = (dout @ self["phi.W2"].T) * gelu_grad(pre)
        grads["phi.W1"] += z.T @ dpre
        grads["phi.b1"] += dpre.sum(axis=0)
        return dpre @ self["phi.W1"].T

    def expert_head(self, r: int, z):
        hid = z @ self[f"exp{r}.W1"] + self[f"exp{r}.b1"]
        out = hid @ self[f"exp{r}.W2"] + self[f"exp{r}.b2"]
        v, norm = l2_normalize(out)
        return v, (z, hid, v, norm)

    def expert_head_backward(self, r: int, cache, dv, grads):
        z, hid, v, norm = cache
        dout = l2_normalize_backward(v, norm, dv)
        grads[f"exp{r}.W2"] += hid.T @ dout
        grads[f"exp{r}.b2"] += dout.sum(axis=0)
        dhid = dout @ self[f"exp{r}.W2"].T
        grads[f"exp{r}.W1"] += z.T @ dhid
        grads[f"exp{r}.b1"] += dhid.sum(axis=0)
        return dhid @ self[f"exp{r}.W1"].T

    def logits(self, z):
        # classifier reads unit-norm features
        u, _ = l2_normalize(z)
        return u @ self["cls.W"] + self["cls.b"]

    def logits_backward(self, z, dl, grads):
        u, norm = l2_normalize(z)
        grads["cls.W"] += u.T @ dl
        grads["cls.b"] += dl.sum(axis=0)
        return l2_normalize_backward(u, norm, dl @ self["cls.W"].T)

    def expert_features(self, r: int, x):
        return self.expert_head(r, self.encode(x))[0]

    # --- checkpoint blob -------------------------------------------------

    CKPT_MAGIC = b"MGCK"
    CKPT_VERSION = 1

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<4sBIII", self.CKPT_MAGIC, self.CKPT_VERSION,
                             self.input_dim, self.dim, self.n_classes),
                 struct.pack("<I", len(self.tensors))]
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f8")
            key = name.encode()
            parts.append(struct.pack("<H", len(key)) + key)
            parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelParams":
        magic, version, d_in, d, k = struct.unpack_from("<4sBIII", blob)
        if magic != cls.CKPT_MAGIC or version != cls.CKPT_VERSION:
            raise ValueError("not a checkpoint or unsupported version")
        off = struct.calcsize("<4sBIII")
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + klen].decode()
            off += klen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(blob, "<f8", size, off).reshape(shape).copy()
            off += 8 * size
        return cls(tensors, d_in, d, k)


@dataclass
class Batch:
    """Two augmented views of an instance batch plus a concept batch.

    ``labels`` is -1 on unlabeled rows. ``concepts[r - 1]`` holds expert r's
    concept id for each concept-batch row.
    """

    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray
    xc: Optional[np.ndarray] = None
    concepts: Optional[np.ndarray] = None
    concept_index: Optional[np.ndarray] = None  # dataset rows behind xc

    @property
    def labeled(self) -> np.ndarray:
        return self.labels >= 0
