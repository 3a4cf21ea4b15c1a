"""Utility-aligned query embeddings.

A small two-layer ReLU projection head is trained on frozen embeddings with an
InfoNCE objective whose positives and negatives come from the similarity of
the queries' utility profiles across servers, not from their embeddings.
Gradients are written out by hand; no autodiff framework is involved.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DomainError, SamplingWarning, TrainingError

IOTA_POS = 0.6
IOTA_NEG = 0.3
TAU_TEMP = 0.07
K_NEG = 64
PER_MODEL = 5
EPOCHS = 10

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class ProjectionHead:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d_in: int, hidden: int = 32, d_out: int = 16, seed: int = 0) -> "ProjectionHead":
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.standard_normal((hidden, d_in)) * math.sqrt(2.0 / d_in),
            b1=np.zeros(hidden),
            W2=rng.standard_normal((d_out, hidden)) * math.sqrt(1.0 / hidden),
            b2=np.zeros(d_out),
        )

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W2.shape[0]

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(**{k: v.copy() for k, v in self.params().items()})

    def _forward(self, X):
        A = X @ self.W1.T + self.b1
        H = np.maximum(A, 0.0)
        return A, H, H @ self.W2.T + self.b2

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Z = self._forward(np.atleast_2d(X))[2]
        return Z[0] if single else Z

    def backward(self, X, dZ) -> dict:
        """Parameter gradients given the loss gradient ``dZ`` w.r.t. the outputs for inputs ``X``."""
        A, H, _ = self._forward(X)
        dA = (dZ @ self.W2) * (A > 0)
        return {"W1": dA.T @ X, "b1": dA.sum(axis=0), "W2": dZ.T @ H, "b2": dZ.sum(axis=0)}


def save_head(head: ProjectionHead, path) -> None:
    data = {"d_in": head.d_in, "hidden": head.W1.shape[0], "d_out": head.d_out, "activation": "relu"}
    data.update({k: v.tolist() for k, v in head.params().items()})
    Path(path).write_text(json.dumps(data) + "\n")


def load_head(path) -> ProjectionHead:
    data = json.loads(Path(path).read_text())
    head = ProjectionHead(**{k: np.array(data[k], dtype=float) for k in PARAM_NAMES})
    if head.W1.shape != (data["hidden"], data["d_in"]) or head.W2.shape != (data["d_out"], data["hidden"]):
        raise DomainError(f"weight shapes in {path} disagree with the declared dimensions")
    return head


# offline data -----------------------------------------------------------


@dataclass
class OfflineDataset:
    X: np.ndarray   # raw embeddings, n x d_in
    U: np.ndarray   # utility vectors, n x N

    def __len__(self) -> int:
        return len(self.X)


def balanced_sample(embeddings, utilities, per_model: int = PER_MODEL, seed: int = 0) -> OfflineDataset:
    """Draw ``per_model`` items uniformly from each group of items sharing the same best server."""
    X = np.asarray(embeddings, dtype=float)
    U = np.asarray(utilities, dtype=float)
    best = np.argmax(U, axis=1)
    rng = np.random.default_rng(seed)
    picked = []
    for j in range(U.shape[1]):
        group = np.flatnonzero(best == j)
        if len(group) == 0:
            continue
        if len(group) < per_model:
            warnings.warn(f"server {j} is best for only {len(group)} items (< {per_model}); taking all",
                          SamplingWarning, stacklevel=2)
            picked.append(group)
        else:
            picked.append(np.sort(rng.choice(group, size=per_model, replace=False)))
    idx = np.concatenate(picked) if picked else np.array([], dtype=int)
    return OfflineDataset(X[idx], U[idx])


def _centered_unit(U: np.ndarray):
    C = U - U.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(C, axis=-1, keepdims=True)
    ok = norm[..., 0] > 1e-12
    return np.where(ok[..., None], C / np.where(norm > 1e-12, norm, 1.0), 0.0), ok


def utility_similarity(u_i, u_j) -> float:
    """Cosine similarity of mean-centered utility vectors; 0 if either is constant."""
    (a, b), _ = _centered_unit(np.array([u_i, u_j], dtype=float))
    return float(np.clip(a @ b, -1.0, 1.0))


def similarity_matrix(U) -> tuple:
    """Pairwise utility similarities and a mask of items usable as anchors."""
    C, ok = _centered_unit(np.asarray(U, dtype=float))
    return np.clip(C @ C.T, -1.0, 1.0), ok


@dataclass(frozen=True)
class PairSelection:
    anchor: int
    positive: int
    negatives: tuple
    similarities: np.ndarray


def select_pairs(dataset_or_U, iota_pos: float = IOTA_POS, iota_neg: float = IOTA_NEG,
                 K_neg: int = K_NEG) -> list:
    """Best positive and up to ``K_neg`` hardest negatives for every anchor that has both."""
    U = dataset_or_U.U if isinstance(dataset_or_U, OfflineDataset) else np.asarray(dataset_or_U, dtype=float)
    C, ok = similarity_matrix(U)
    pairs = []
    for i in range(len(U)):
        if not ok[i]:
            continue
        c = C[i]
        others = np.arange(len(U)) != i
        pos = np.flatnonzero(others & (c > iota_pos))
        neg = np.flatnonzero(others & (c < iota_neg))
        if len(pos) == 0 or len(neg) == 0:
            continue
        j_plus = int(pos[np.argmax(c[pos])])
        hardest = neg[np.argsort(c[neg], kind="stable")[:K_neg]]
        pairs.append(PairSelection(i, j_plus, tuple(int(j) for j in hardest), c.copy()))
    return pairs


# loss -------------------------------------------------------------------


def _pair_loss(Z, pair: PairSelection, tau: float, dZ: np.ndarray) -> float:
    """InfoNCE for one anchor; accumulates its output gradient into ``dZ``."""
    a = pair.anchor
    others = np.array((pair.positive,) + pair.negatives)
    s = Z[others] @ Z[a] / tau
    m = s.max()
    w = np.exp(s - m)
    lse = m + math.log(w.sum())
    coef = w / w.sum()
    coef[0] -= 1.0
    dZ[a] += coef @ Z[others] / tau
    np.add.at(dZ, others, coef[:, None] * Z[a] / tau)
    return lse - s[0]


def batch_loss(head: ProjectionHead, X, pairs, tau: float = TAU_TEMP):
    """Summed InfoNCE over ``pairs`` (indices into ``X``) and its parameter gradients."""
    if tau <= 0:
        raise DomainError("temperature must be positive")
    X = np.asarray(X, dtype=float)
    Z = head(X)
    dZ = np.zeros_like(Z)
    loss = sum(_pair_loss(Z, p, tau, dZ) for p in pairs)
    return float(loss), head.backward(X, dZ)


def infonce_loss(head: ProjectionHead, x, x_pos, negatives, tau: float = TAU_TEMP):
    """Loss and parameter gradients for one anchor, its positive, and its negatives."""
    negatives = np.atleast_2d(np.asarray(negatives, dtype=float))
    X = np.vstack([x, x_pos, negatives])
    pair = PairSelection(0, 1, tuple(range(2, len(X))), np.empty(0))
    return batch_loss(head, X, [pair], tau)


def train_head(dataset: OfflineDataset, head: Optional[ProjectionHead] = None, epochs: int = EPOCHS,
               learning_rate: float = 1e-3, iota_pos: float = IOTA_POS, iota_neg: float = IOTA_NEG,
               tau: float = TAU_TEMP, K_neg: int = K_NEG, seed: int = 0,
               history: Optional[list] = None) -> ProjectionHead:
    """Full-batch gradient descent on the summed InfoNCE loss.

    The pair selection depends only on utilities, so it is the same every
    epoch and is computed once. A fresh head is initialized from ``seed``
    when none is given. Per-epoch losses are appended to ``history``.
    """
    head = ProjectionHead.init(dataset.X.shape[1], seed=seed) if head is None else head.copy()
    pairs = select_pairs(dataset.U, iota_pos, iota_neg, K_neg)
    if not pairs:
        return head
    initial = None
    for _ in range(epochs):
        loss, grads = batch_loss(head, dataset.X, pairs, tau)
        if initial is None:
            initial = loss
        elif not np.isfinite(loss) or loss > 10 * initial:
            raise TrainingError(f"loss diverged: {loss:.4g} vs initial {initial:.4g}")
        if history is not None:
            history.append(loss)
        for k in PARAM_NAMES:
            setattr(head, k, getattr(head, k) - learning_rate * grads[k])
    if history is not None:
        history.append(batch_loss(head, dataset.X, pairs, tau)[0])
    return head


def two_cluster_dataset(n_per: int = 20, d_in: int = 8, N: int = 3, noise: float = 0.8, seed: int = 0):
    """Toy offline data: two utility profiles, embeddings weakly tied to the profile.

    Returns the dataset and the cluster label of each item.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((2, d_in))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    profiles = np.array([np.linspace(1.0, 0.0, N), np.linspace(0.0, 1.0, N)])
    labels = np.repeat([0, 1], n_per)
    X = centers[labels] + noise * rng.standard_normal((2 * n_per, d_in))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    U = profiles[labels] + 0.05 * rng.standard_normal((2 * n_per, N))
    return OfflineDataset(X, U), labels
