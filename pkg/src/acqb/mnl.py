"""Multinomial-logit choice model.

Utilities are real numbers, one per offered server; the outside option has
utility 0. Server indices are 0-based and assortments are ascending tuples.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import DegenerateUtilityWarning, DomainError

Assortment = tuple[int, ...]

R_LO = 0.1
R_HI = 0.99


@dataclass(frozen=True)
class ChoiceDistribution:
    """Outside-option probability ``p0`` and per-item probabilities ``p``."""

    p0: float
    p: np.ndarray

    @property
    def K(self) -> int:
        return len(self.p)


def assortments(N: int, K: int) -> list[Assortment]:
    """All size-K subsets of ``range(N)`` in lexicographic order."""
    if not 1 <= K <= N:
        raise DomainError(f"need 1 <= K <= N, got K={K}, N={N}")
    return list(combinations(range(N), K))


def validate_assortment(S: Sequence[int], N: int, K: int | None = None) -> Assortment:
    S = tuple(int(j) for j in S)
    if not S:
        raise DomainError("assortment is empty")
    if any(b <= a for a, b in zip(S, S[1:])):
        raise DomainError(f"assortment must be strictly increasing: {S}")
    if (S[0] < 0 or S[-1] >= N):
        raise DomainError(f"assortment {S} out of range for N={N}")
    if K is not None and len(S) != K:
        raise DomainError(f"assortment {S} has size {len(S)}, expected {K}")
    return S


def _as_utilities(utilities) -> np.ndarray:
    u = np.asarray(utilities, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise DomainError("utilities must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(u)):
        raise DomainError(f"non-finite utility in {u}")
    return u


def choice_probs(utilities) -> ChoiceDistribution:
    """MNL probabilities for the offered items and the outside option."""
    u = _as_utilities(utilities)
    shift = max(0.0, float(u.max()))
    w = np.exp(u - shift)
    w0 = math.exp(-shift)
    denom = w0 + w.sum()
    return ChoiceDistribution(p0=w0 / denom, p=w / denom)


def departure_rate(utilities) -> float:
    """Probability that some offered item is accepted, ``1 - p0``."""
    return 1.0 - choice_probs(utilities).p0


def departure_rates(U: np.ndarray) -> np.ndarray:
    """Vectorized :func:`departure_rate` over the last axis of ``U``."""
    U = np.asarray(U, dtype=float)
    shift = np.maximum(U.max(axis=-1), 0.0)
    w0 = np.exp(-shift)
    denom = w0 + np.exp(U - shift[..., None]).sum(axis=-1)
    return 1.0 - w0 / denom


def shared_param_utilities(x_features, S: Sequence[int], theta) -> np.ndarray:
    """Utilities ``x_{-j}^T theta`` for ``j`` in ``S``.

    ``x_features`` holds one feature vector per server (row ``j`` for server ``j``).
    """
    X = np.atleast_2d(np.asarray(x_features, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or X.shape[1] != theta.shape[0]:
        raise DomainError(f"feature dim {X.shape[1]} does not match parameter dim {theta.shape}")
    S = validate_assortment(S, X.shape[0])
    return X[list(S)] @ theta


def disjoint_utilities(x, S: Sequence[int], Theta) -> np.ndarray:
    """Utilities ``x^T theta_j`` for ``j`` in ``S``; ``Theta`` has one row per server."""
    x = np.asarray(x, dtype=float)
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if x.ndim != 1 or Theta.shape[1] != x.shape[0]:
        raise DomainError(f"context dim {x.shape} does not match parameter rows {Theta.shape}")
    S = validate_assortment(S, Theta.shape[0])
    return Theta[list(S)] @ x


def kron_features(x, N: int) -> np.ndarray:
    """Per-server features ``x kron e_j`` (rows), of dimension ``d*N``.

    Pairs with :func:`vec_theta`, so ``kron_features(x, N) @ vec_theta(Theta) == Theta @ x``.
    """
    x = np.asarray(x, dtype=float)
    return np.kron(x[None, :], np.eye(N))


def vec_theta(Theta) -> np.ndarray:
    """Stack an ``N x d`` per-server parameter matrix into a ``d*N`` vector."""
    return np.asarray(Theta, dtype=float).T.ravel()


def unvec_theta(theta, N: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return theta.reshape(-1, N).T.copy()


def sample_choice(dist: ChoiceDistribution, u_rand: float) -> int:
    """Threshold rule on a shared uniform.

    Items occupy the intervals ``(c_{j-1}, c_j]`` of their cumulative sums in
    assortment order; anything above ``c_K`` is the outside option. Returns the
    1-based item position, or 0 for the outside option.
    """
    if not 0.0 <= u_rand < 1.0:
        raise DomainError(f"u_rand must lie in [0, 1), got {u_rand}")
    cum = np.cumsum(dist.p)
    j = int(np.searchsorted(cum, u_rand, side="left"))
    return j + 1 if j < len(cum) else 0


def utility_from_perf_cost(perf, cost, rho: float = 0.0, r_lo: float = R_LO, r_hi: float = R_HI) -> np.ndarray:
    """Map performance/cost scores to departure probabilities in ``[r_lo, r_hi]``.

    Raw utility ``perf - rho * cost`` is min-max normalized across servers (the
    last axis) and then rescaled affinely. Rows whose raw utilities are all equal
    get the midpoint ``(r_lo + r_hi) / 2`` and a :class:`DegenerateUtilityWarning`.
    """
    if not (0.0 < r_lo < r_hi < 1.0):
        raise DomainError(f"need 0 < r_lo < r_hi < 1, got ({r_lo}, {r_hi})")
    if rho < 0:
        raise DomainError(f"cost weight must be non-negative, got {rho}")
    raw = np.asarray(perf, dtype=float) - rho * np.asarray(cost, dtype=float)
    lo = raw.min(axis=-1, keepdims=True)
    span = raw.max(axis=-1, keepdims=True) - lo
    degenerate = span <= 0
    if np.any(degenerate):
        warnings.warn("all raw utilities equal; using the midpoint of [r_lo, r_hi]",
                      DegenerateUtilityWarning, stacklevel=2)
    norm = np.where(degenerate, 0.5, (raw - lo) / np.where(degenerate, 1.0, span))
    return r_lo + (r_hi - r_lo) * norm


def odds_choice_probs(u, S: Sequence[int]) -> ChoiceDistribution:
    """Choice probabilities when each server's logistic departure probability is ``u[j]``.

    Equivalent to MNL with utilities ``log(u/(1-u))``; evaluated in product form
    so a single item reproduces its departure probability.
    """
    u = np.asarray(u, dtype=float)
    S = validate_assortment(S, len(u))
    v = u[list(S)]
    if np.any((v <= 0) | (v >= 1)):
        raise DomainError(f"departure probabilities must lie in (0, 1), got {v}")
    q = 1.0 - v
    # numerator_j = u_j * prod_{k != j} (1 - u_k)
    num = np.array([v[j] * np.prod(np.delete(q, j)) for j in range(len(v))])
    base = np.prod(q)
    denom = base + num.sum()
    return ChoiceDistribution(p0=base / denom, p=num / denom)


def log_odds(u) -> np.ndarray:
    """Latent utility whose logistic transform is ``u``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise DomainError("departure probabilities must lie in (0, 1)")
    return np.log(u) - np.log1p(-u)
