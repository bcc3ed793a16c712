"""Instance-, concept- and collaboration-level objectives with exact gradients.

Every loss returns ``(value, grads)`` where ``grads`` has the keys of
``ModelParams.tensors``. Prototypes and alignment matrices are constants
inside a step.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .memory import ConceptMemory
from .model import (
    Batch,
    Hyper,
    ModelParams,
    log_softmax,
    softmax,
    softmax_backward,
)

PROJECTION_FLOOR = 1e-12


# --- instance-level contrastive -------------------------------------------


def _self_contrast(a, b, tau):
    """Mean over anchors of -log(exp(a_i.b_i/tau) / sum_{j!=i} exp(a_i.a_j/tau))."""
    n = a.shape[0]
    s = a @ a.T / tau
    np.fill_diagonal(s, -np.inf)
    lse = logsumexp(s, axis=1)
    pos = np.sum(a * b, axis=1) / tau
    value = float(np.mean(lse - pos))
    p = np.exp(s - lse[:, None])
    da = ((p + p.T) @ a - b) / (tau * n)
    db = -a / (tau * n)
    return value, da, db


def _sup_contrast(a, y, tau):
    """Supervised contrast among labeled rows; anchors without positives add 0."""
    n = a.shape[0]
    if n < 2:
        return 0.0, np.zeros_like(a)
    s = a @ a.T / tau
    np.fill_diagonal(s, -np.inf)
    lse = logsumexp(s, axis=1)
    same = (y[:, None] == y[None, :]) & ~np.eye(n, dtype=bool)
    npos = same.sum(axis=1)
    active = npos > 0
    if not active.any():
        return 0.0, np.zeros_like(a)
    w = np.where(same, 1.0 / np.maximum(npos, 1)[:, None], 0.0)
    s_fin = np.where(np.isfinite(s), s, 0.0)
    per = lse - np.sum(w * s_fin, axis=1)
    value = float(np.sum(per[active]) / n)
    p = np.exp(s - lse[:, None])
    g = (p - w) * active[:, None]
    da = (g + g.T) @ a / (tau * n)
    return value, da


def loss_instance_contrastive(batch: Batch, params: ModelParams, hyper: Hyper):
    """(1 - lam) * self-supervised + lam * supervised, averaged over both view roles."""
    if batch.x1.shape[0] < 2:
        raise ValueError("instance batch needs at least two samples")
    grads = params.zeros_like()
    z1, z2 = params.encode(batch.x1), params.encode(batch.x2)
    h1, c1 = params.instance_head(z1)
    h2, c2 = params.instance_head(z2)
    lam = hyper.lam
    dh1 = np.zeros_like(h1)
    dh2 = np.zeros_like(h2)

    v12, da, db = _self_contrast(h1, h2, hyper.tau_u)
    dh1 += 0.5 * (1 - lam) * da
    dh2 += 0.5 * (1 - lam) * db
    v21, da, db = _self_contrast(h2, h1, hyper.tau_u)
    dh2 += 0.5 * (1 - lam) * da
    dh1 += 0.5 * (1 - lam) * db
    value = (1 - lam) * 0.5 * (v12 + v21)

    lab = batch.labeled
    if lam > 0 and lab.sum() >= 2:
        y = batch.labels[lab]
        for h, dh in ((h1, dh1), (h2, dh2)):
            v, da = _sup_contrast(h[lab], y, hyper.tau_l)
            value += lam * 0.5 * v
            dh[lab] += lam * 0.5 * da

    dz1 = params.instance_head_backward(c1, dh1, grads)
    dz2 = params.instance_head_backward(c2, dh2, grads)
    params.encode_backward(batch.x1, dz1, grads)
    params.encode_backward(batch.x2, dz2, grads)
    return value, grads


# --- switchable classifier --------------------------------------------------


def _cross_entropy_labels(logits, y, tau):
    logp = log_softmax(logits / tau)
    n = len(y)
    value = -float(np.mean(logp[np.arange(n), y]))
    p = np.exp(logp)
    p[np.arange(n), y] -= 1.0
    return value, p / (tau * n)


def _distill(student, teacher, tau_s, tau_t):
    """Mean of -sum_k q_k log p_k with q = softmax(teacher/tau_t), p = softmax(student/tau_s).

    Gradients flow into both arguments.
    """
    n = student.shape[0]
    logp = log_softmax(student / tau_s)
    q = softmax(teacher / tau_t)
    value = -float(np.mean(np.sum(q * logp, axis=1)))
    d_student = (np.exp(logp) - q) / (tau_s * n)
    d_teacher = softmax_backward(q, -logp) / (tau_t * n)
    return value, d_student, d_teacher


def loss_classification(batch: Batch, params: ModelParams, hyper: Hyper,
                        k_u_known: bool = False, epoch: int = 0):
    """Labeled cross-entropy, plus self-distillation with mean-entropy regularizer when K_U is known."""
    grads = params.zeros_like()
    width = params.n_classes
    lab = batch.labeled
    if np.any(batch.labels[lab] >= width):
        raise ValueError("label exceeds classifier width")
    z1, z2 = params.encode(batch.x1), params.encode(batch.x2)
    l1, l2 = params.logits(z1), params.logits(z2)
    dl1, dl2 = np.zeros_like(l1), np.zeros_like(l2)
    lam = hyper.lam
    value = 0.0

    if lab.any():
        y = batch.labels[lab]
        for logits, dl in ((l1, dl1), (l2, dl2)):
            v, d = _cross_entropy_labels(logits[lab], y, hyper.tau_s)
            value += lam * 0.5 * v
            dl[lab] += lam * 0.5 * d

    if k_u_known:
        w = 1.0 - lam
        tau_t = hyper.tau_t(epoch)
        for student, teacher, ds, dt in ((l1, l2, dl1, dl2), (l2, l1, dl2, dl1)):
            v, d_s, d_t = _distill(student, teacher, hyper.tau_s, tau_t)
            value += w * 0.5 * v
            ds += w * 0.5 * d_s
            dt += w * 0.5 * d_t
        p1 = softmax(l1 / hyper.tau_s)
        p2 = softmax(l2 / hyper.tau_s)
        rows = 2 * p1.shape[0]
        p_mean = (p1.sum(axis=0) + p2.sum(axis=0)) / rows
        entropy = -float(np.sum(p_mean * np.log(p_mean)))
        value -= w * hyper.epsilon * entropy
        # d(-w*eps*H)/dp_row = w*eps*(log p_mean + 1) / rows
        g = w * hyper.epsilon * (np.log(p_mean) + 1.0) / rows
        dl1 += softmax_backward(p1, np.broadcast_to(g, p1.shape)) / hyper.tau_s
        dl2 += softmax_backward(p2, np.broadcast_to(g, p2.shape)) / hyper.tau_s

    dz1 = params.logits_backward(z1, dl1, grads)
    dz2 = params.logits_backward(z2, dl2, grads)
    params.encode_backward(batch.x1, dz1, grads)
    params.encode_backward(batch.x2, dz2, grads)
    return value, grads


# --- concept-level ----------------------------------------------------------


def loss_concept_contrastive(batch: Batch, params: ModelParams,
                             memories: Sequence[ConceptMemory], hyper: Hyper):
    """Sum over experts of the mean prototype-contrastive cross-entropy."""
    grads = params.zeros_like()
    zc = params.encode(batch.xc)
    dz = np.zeros_like(zc)
    value = 0.0
    n = zc.shape[0]
    for mem in memories:
        r = mem.expert_id
        c = np.asarray(batch.concepts[r - 1])
        if np.any(c < 0) or np.any(c >= mem.k):
            raise ValueError(f"concept id out of range for expert {r}")
        v, cache = params.expert_head(r, zc)
        logp = log_softmax(v @ mem.prototypes.T / hyper.tau_c)
        value += -float(np.mean(logp[np.arange(n), c]))
        dlog = np.exp(logp)
        dlog[np.arange(n), c] -= 1.0
        dv = dlog @ mem.prototypes / (hyper.tau_c * n)
        dz += params.expert_head_backward(r, cache, dv, grads)
    params.encode_backward(batch.xc, dz, grads)
    return value, grads


def alignment_matrix(mem_r: ConceptMemory, mem_1: ConceptMemory) -> np.ndarray:
    """Cosine similarity between every prototype of expert r and of the base expert."""
    a = mem_r.prototypes / np.linalg.norm(mem_r.prototypes, axis=1, keepdims=True)
    b = mem_1.prototypes / np.linalg.norm(mem_1.prototypes, axis=1, keepdims=True)
    return np.clip(a @ b.T, -1.0, 1.0)


def expert_distribution(v: np.ndarray, mem: ConceptMemory) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    cos = (v / np.linalg.norm(v, axis=-1, keepdims=True)) @ mem.prototypes.T
    return softmax(cos)


def project_distribution(p_r: np.ndarray, m: np.ndarray) -> np.ndarray:
    raw = np.asarray(p_r) @ m
    c = np.maximum(raw, 0.0) + PROJECTION_FLOOR
    return c / c.sum(axis=-1, keepdims=True)


def symmetric_kl(a, b) -> np.ndarray:
    return 0.5 * np.sum((a - b) * (np.log(a) - np.log(b)), axis=-1)


def loss_collaborative(batch: Batch, params: ModelParams,
                       memories: Sequence[ConceptMemory], hyper: Hyper):
    """Mean symmetric KL between the base expert's concept distribution and each projected one."""
    grads = params.zeros_like()
    by_id = {m.expert_id: m for m in memories}
    if 1 not in by_id or len(by_id) < 2:
        return 0.0, grads
    zc = params.encode(batch.xc)
    n = zc.shape[0]
    dz = np.zeros_like(zc)
    mem1 = by_id[1]
    v1, cache1 = params.expert_head(1, zc)
    p1 = softmax(v1 @ mem1.prototypes.T)
    dp1 = np.zeros_like(p1)
    value = 0.0
    for r in sorted(by_id):
        if r == 1:
            continue
        mem = by_id[r]
        m = alignment_matrix(mem, mem1)
        vr, cache = params.expert_head(r, zc)
        pr = softmax(vr @ mem.prototypes.T)
        raw = pr @ m
        c = np.maximum(raw, 0.0) + PROJECTION_FLOOR
        total = c.sum(axis=1, keepdims=True)
        b = c / total
        diff = np.log(p1) - np.log(b)
        value += float(np.mean(0.5 * np.sum((p1 - b) * diff, axis=1)))
        dp1 += 0.5 * (diff + (p1 - b) / p1) / n
        db = 0.5 * (-diff - (p1 - b) / b) / n
        dc = (db - np.sum(db * b, axis=1, keepdims=True)) / total
        draw = dc * (raw > 0)
        dpr = draw @ m.T
        dvr = softmax_backward(pr, dpr) @ mem.prototypes
        dz += params.expert_head_backward(r, cache, dvr, grads)
    dv1 = softmax_backward(p1, dp1) @ mem1.prototypes
    dz += params.expert_head_backward(1, cache1, dv1, grads)
    params.encode_backward(batch.xc, dz, grads)
    return value, grads


# --- total ------------------------------------------------------------------


def _add(into, other, scale=1.0):
    for k, v in other.items():
        into[k] += scale * v


def loss_total(batch: Batch, params: ModelParams, memories: Sequence[ConceptMemory],
               hyper: Hyper, k_u_known: bool = False, epoch: int = 0):
    """``L_con + L_cls + alpha * (L_C + L_T)`` with the ablation switches of ``hyper``.

    Returns ``(value, grads, parts)`` where ``parts`` maps component name to value.
    """
    grads = params.zeros_like()
    parts = {"loss_con": 0.0, "loss_cls": 0.0, "loss_c": 0.0, "loss_t": 0.0}
    if hyper.use_irl:
        v, g = loss_instance_contrastive(batch, params, hyper)
        parts["loss_con"] = v
        _add(grads, g)
        v, g = loss_classification(batch, params, hyper, k_u_known, epoch)
        parts["loss_cls"] = v
        _add(grads, g)
    active = [m for m in memories if m.expert_id in hyper.experts]
    if hyper.use_crl and active and batch.xc is not None and hyper.alpha > 0:
        v, g = loss_concept_contrastive(batch, params, active, hyper)
        parts["loss_c"] = v
        _add(grads, g, hyper.alpha)
        if hyper.use_collab and len(active) > 1:
            v, g = loss_collaborative(batch, params, active, hyper)
            parts["loss_t"] = v
            _add(grads, g, hyper.alpha)
    value = parts["loss_con"] + parts["loss_cls"] + hyper.alpha * (parts["loss_c"] + parts["loss_t"])
    return value, grads, parts
