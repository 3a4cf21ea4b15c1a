"""Regularized MNL maximum likelihood, design matrices, and Thompson samples.

Two parameterizations share one Newton solver:

* shared: every offered item ``j`` has its own feature row and a single
  parameter vector scores all items;
* disjoint: all items see the same context ``x`` and server ``j`` has its own
  parameter row ``theta_j``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError, EstimationWarning, NumericalError
from .mnl import departure_rate, departure_rates

GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 100
_TS_RATE = math.log(1.0 - 1.0 / (4.0 * math.sqrt(math.e * math.pi)))


@dataclass(frozen=True)
class Observation:
    """Feature rows of the offered items (``K x p``), the assortment, and the choice.

    ``choice`` is the 1-based position of the accepted item, 0 for the outside option.
    """

    features: np.ndarray
    assortment: tuple
    choice: int

    def __post_init__(self):
        if not 0 <= self.choice <= len(self.assortment):
            raise DomainError(f"choice {self.choice} outside 0..{len(self.assortment)}")
        if len(self.features) != len(self.assortment):
            raise DomainError("one feature row per offered item is required")

    @property
    def y(self) -> np.ndarray:
        """One-hot choice vector ``(y_0, y_1, ..., y_K)``."""
        out = np.zeros(len(self.assortment) + 1, dtype=int)
        out[self.choice] = 1
        return out


class ObservationLog:
    """Append-only log of observations, kept as growable stacked arrays."""

    def __init__(self):
        self._n = 0
        self._F = self._S = self._y = None

    def append(self, features, assortment, choice: int) -> None:
        obs = Observation(np.asarray(features, dtype=float), tuple(assortment), int(choice))
        if self._F is None:
            K, p = obs.features.shape
            self._F = np.empty((16, K, p))
            self._S = np.empty((16, K), dtype=int)
            self._y = np.empty(16, dtype=int)
        elif self._n == len(self._y):
            self._F = np.concatenate([self._F, np.empty_like(self._F)])
            self._S = np.concatenate([self._S, np.empty_like(self._S)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._F[self._n] = obs.features
        self._S[self._n] = obs.assortment
        self._y[self._n] = obs.choice
        self._n += 1

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> Observation:
        if not -self._n <= i < self._n:
            raise IndexError(i)
        i %= self._n
        return Observation(self._F[i].copy(), tuple(int(j) for j in self._S[i]), int(self._y[i]))

    @property
    def entries(self) -> list:
        return [self[i] for i in range(self._n)]

    def arrays(self):
        """Stacked ``(features n x K x p, assortments n x K, choices n)``."""
        n = self._n
        return self._F[:n], self._S[:n], self._y[:n]


# loss and Newton solver -------------------------------------------------


def _probs(U: np.ndarray):
    """Item probabilities (n x K) and log-normalizer (n,) for utilities U."""
    shift = np.maximum(U.max(axis=1), 0.0)
    W = np.exp(U - shift[:, None])
    w0 = np.exp(-shift)
    denom = w0 + W.sum(axis=1)
    return W / denom[:, None], shift + np.log(denom)


def _choice_utility(U: np.ndarray, y: np.ndarray) -> np.ndarray:
    picked = np.zeros(len(y))
    hit = y > 0
    picked[hit] = U[np.flatnonzero(hit), y[hit] - 1]
    return picked


def nll(theta, F, y, lambda0: float, offset=None) -> float:
    """``lambda0/2 |theta|^2 - sum log p_{y_i}`` for utilities ``F theta + offset``."""
    theta = np.asarray(theta, dtype=float)
    reg = 0.5 * lambda0 * float(theta @ theta)
    if len(y) == 0:
        return reg
    U = F @ theta if offset is None else F @ theta + offset
    _, lse = _probs(U)
    return reg - float(np.sum(_choice_utility(U, y) - lse))


def nll_grad(theta, F, y, lambda0: float, offset=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = lambda0 * theta
    if len(y) == 0:
        return g
    U = F @ theta if offset is None else F @ theta + offset
    P, _ = _probs(U)
    R = P.copy()
    hit = y > 0
    R[np.flatnonzero(hit), y[hit] - 1] -= 1.0
    return g + R.reshape(-1) @ F.reshape(-1, F.shape[-1])


def _grad_hess(theta, F, y, lambda0, offset):
    p = len(theta)
    g = lambda0 * theta
    H = lambda0 * np.eye(p)
    if len(y) == 0:
        return g, H
    U = F @ theta if offset is None else F @ theta + offset
    P, _ = _probs(U)
    R = P.copy()
    hit = y > 0
    R[np.flatnonzero(hit), y[hit] - 1] -= 1.0
    n, K, _ = F.shape
    flat = F.reshape(n * K, p)
    g = g + R.reshape(-1) @ flat
    mean = np.matmul(P[:, None, :], F)[:, 0, :]
    H = H + (flat * P.reshape(-1, 1)).T @ flat - mean.T @ mean
    return g, H


def newton_solve(F, y, lambda0: float, theta0=None, offset=None,
                 tol: float = GRAD_TOL, max_iter: int = MAX_NEWTON_ITER) -> np.ndarray:
    """Damped Newton on the ridge-regularized MNL negative log-likelihood.

    Parameters
    ----------
    F : array (n, K, p)
        Feature row of each offered item in each logged round.
    y : array (n,)
        Chosen position per round, 0 for the outside option.
    lambda0 : float
        Ridge weight; makes the objective strictly convex.
    theta0 : array (p,), optional
        Warm start.
    offset : array (n, K), optional
        Fixed utility added to each item (parameters held out of the fit).
    """
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=int)
    p = F.shape[-1]
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    loss = nll(theta, F, y, lambda0, offset)
    for it in range(max_iter):
        g, H = _grad_hess(theta, F, y, lambda0, offset)
        if np.linalg.norm(g) <= tol:
            return theta
        step = np.linalg.solve(H, g)
        decrease = float(g @ step)
        if decrease <= 1e-10 * max(1.0, abs(loss)):
            # predicted decrease is below the loss's float resolution: the line
            # search cannot discriminate, and a pure Newton step is safe here
            theta = theta - step
            loss = nll(theta, F, y, lambda0, offset)
            continue
        s = 1.0
        while s >= 1e-12:
            cand = theta - s * step
            cand_loss = nll(cand, F, y, lambda0, offset)
            if cand_loss <= loss - 1e-4 * s * decrease:
                break
            s *= 0.5
        else:
            # no decrease representable in floating point; best iterate reached
            break
        theta, loss = cand, cand_loss
    g = nll_grad(theta, F, y, lambda0, offset)
    if np.linalg.norm(g) > tol:
        warnings.warn(f"Newton stopped after {it + 1} iterations with |grad| = {np.linalg.norm(g):.3g}",
                      EstimationWarning, stacklevel=2)
    return theta


def mle_fit(log: ObservationLog, lambda0: float, warm_start=None, dim: Optional[int] = None) -> np.ndarray:
    """Shared-parameter MLE over every logged round."""
    if len(log) == 0:
        if warm_start is None and dim is None:
            raise DomainError("empty log: pass dim or warm_start to fix the parameter dimension")
        return np.zeros(dim if dim is not None else len(warm_start))
    F, _, y = log.arrays()
    return newton_solve(F, y, lambda0, warm_start)


def _block_design(X, S, y, Theta, servers):
    """Restrict a disjoint log to rounds touching ``servers``.

    Returns block features over the concatenated parameters of ``servers`` and
    the utility offset contributed by servers held fixed.
    """
    servers = list(servers)
    pos = np.full(Theta.shape[0], -1)
    pos[servers] = np.arange(len(servers))
    block = pos[S]                      # n x K, -1 for held-out servers
    keep = np.any(block >= 0, axis=1)
    X, S, y, block = X[keep], S[keep], y[keep], block[keep]
    n, K = S.shape
    d = Theta.shape[1]
    F = np.zeros((n, K, len(servers) * d))
    offset = np.zeros((n, K))
    for k in range(K):
        inside = block[:, k] >= 0
        rows = np.flatnonzero(inside)
        cols = block[rows, k][:, None] * d + np.arange(d)
        F[rows[:, None], k, cols] = X[rows]
        out = np.flatnonzero(~inside)
        offset[out, k] = np.einsum("id,id->i", X[out], Theta[S[out, k]])
    return F, y, offset


def disjoint_mle_fit(log: ObservationLog, lambda0: float, N: int, d: int,
                     servers: Optional[Sequence[int]] = None, warm_start=None) -> np.ndarray:
    """Per-server MLE for a disjoint log; returns the ``N x d`` parameter matrix.

    Only the rows listed in ``servers`` (all by default) are re-solved; the
    others stay at ``warm_start`` and enter the fit as fixed utilities. With
    every server free this is the joint stationary point.
    """
    Theta = np.zeros((N, d)) if warm_start is None else np.array(warm_start, dtype=float)
    servers = list(range(N)) if servers is None else sorted(set(int(j) for j in servers))
    if not servers:
        return Theta
    if len(log) == 0:
        Theta[servers] = 0.0
        return Theta
    Fx, S, y = log.arrays()
    X = Fx[:, 0, :]
    F, yb, offset = _block_design(X, S, y, Theta, servers)
    theta0 = Theta[servers].ravel()
    sol = newton_solve(F, yb, lambda0, theta0, offset)
    Theta[servers] = sol.reshape(len(servers), d)
    return Theta


def disjoint_gradient(log: ObservationLog, lambda0: float, Theta) -> np.ndarray:
    """Gradient of the disjoint loss with respect to every server row (``N x d``)."""
    Theta = np.asarray(Theta, dtype=float)
    N, d = Theta.shape
    if len(log) == 0:
        return lambda0 * Theta
    Fx, S, y = log.arrays()
    X = Fx[:, 0, :]
    F, yb, offset = _block_design(X, S, y, Theta, range(N))
    return nll_grad(Theta.ravel(), F, yb, lambda0, offset).reshape(N, d)


# confidence radius and sampling -------------------------------------------


def confidence_radius(l: int, d: int, K: int, kappa: float, lambda0: float) -> float:
    if l < 0:
        raise DomainError("round count must be non-negative")
    if l == 0:
        return kappa * math.sqrt(lambda0)
    return (kappa / 2.0) * math.sqrt(d * math.log(1.0 + l * K / (d * lambda0)) + 4.0 * math.log(l)) \
        + kappa * math.sqrt(lambda0)


def sample_count(K: int) -> int:
    """Number of Thompson samples per round for assortment size ``K``."""
    if K < 1:
        raise DomainError("K must be at least 1")
    return max(1, math.ceil(1.0 - math.log(K) / _TS_RATE))


def thompson_samples(theta_hat, alpha: float, V, M: int, rng: np.random.Generator) -> np.ndarray:
    """``M`` draws from ``N(theta_hat, alpha^2 V^{-1})``, one per row."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("design matrix is not positive definite") from exc
    Z = rng.standard_normal((M, len(theta_hat)))
    # (L^T)^{-1} z has covariance V^{-1}
    return theta_hat + alpha * solve_triangular(L.T, Z.T, lower=False).T


def optimistic_rate(x_features, S, samples) -> float:
    """Departure rate at the per-item maximum utility over the samples (shared model)."""
    X = np.asarray(x_features, dtype=float)[list(S)]
    samples = np.atleast_2d(samples)
    if X.shape[1] != samples.shape[1]:
        raise DomainError(f"feature dim {X.shape[1]} does not match sample dim {samples.shape[1]}")
    return departure_rate((X @ samples.T).max(axis=1))


def disjoint_optimistic_rate(x, S, samples) -> float:
    """Same as :func:`optimistic_rate` with per-server sample sets ``samples[j]`` (``N x M x d``)."""
    x = np.asarray(x, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[2] != x.shape[0]:
        raise DomainError(f"samples must be N x M x {x.shape[0]}, got {samples.shape}")
    return departure_rate((samples[list(S)] @ x).max(axis=1))


def optimistic_utilities(contexts, samples) -> np.ndarray:
    """``max_i x^T theta_j^{(i)}`` for every context row and server (``Q x N``)."""
    return np.einsum("qd,jmd->qjm", contexts, samples).max(axis=2)


# estimator states -------------------------------------------------------


class SharedEstimator:
    """Design matrix, MLE, and confidence radius for the shared model."""

    def __init__(self, dim: int, K: int, lambda0: float = 1.0, kappa: float = 1.0):
        if lambda0 <= 0 or kappa < 0:
            raise DomainError("need lambda0 > 0 and kappa >= 0")
        self.dim, self.K = dim, K
        self.lambda0, self.kappa = lambda0, kappa
        self.V = lambda0 * np.eye(dim)
        self.theta_hat = np.zeros(dim)
        self.log = ObservationLog()

    @property
    def count(self) -> int:
        return len(self.log)

    @property
    def alpha(self) -> float:
        return confidence_radius(self.count, self.dim, self.K, self.kappa, self.lambda0)

    def update(self, features, S, choice: int) -> None:
        features = np.asarray(features, dtype=float)
        self.log.append(features, S, choice)
        self.V = self.V + features.T @ features
        self.theta_hat = mle_fit(self.log, self.lambda0, self.theta_hat)

    def sample(self, M: int, rng) -> np.ndarray:
        return thompson_samples(self.theta_hat, self.alpha, self.V, M, rng)


class DisjointEstimator:
    """Per-server design matrices, MLE rows, counts, and confidence radii."""

    def __init__(self, N: int, d: int, K: int, lambda0: float = 1.0, kappa: float = 1.0):
        if lambda0 <= 0 or kappa < 0:
            raise DomainError("need lambda0 > 0 and kappa >= 0")
        self.N, self.d, self.K = N, d, K
        self.lambda0, self.kappa = lambda0, kappa
        self.V = np.repeat((lambda0 * np.eye(d))[None], N, axis=0)
        self.Theta_hat = np.zeros((N, d))
        self.counts = np.zeros(N, dtype=int)
        self.alpha = np.full(N, confidence_radius(0, d, K, kappa, lambda0))
        self.log = ObservationLog()

    def update(self, x, S, choice: int) -> None:
        x = np.asarray(x, dtype=float)
        S = tuple(S)
        self.log.append(np.tile(x, (len(S), 1)), S, choice)
        outer = np.outer(x, x)
        for j in S:
            self.V[j] = self.V[j] + outer
            self.counts[j] += 1
            self.alpha[j] = confidence_radius(int(self.counts[j]), self.d, self.K, self.kappa, self.lambda0)
        self.Theta_hat = disjoint_mle_fit(self.log, self.lambda0, self.N, self.d, servers=S,
                                          warm_start=self.Theta_hat)

    def sample(self, M: int, rng) -> np.ndarray:
        """Samples per server, shaped ``N x M x d``."""
        return np.stack([thompson_samples(self.Theta_hat[j], self.alpha[j], self.V[j], M, rng)
                         for j in range(self.N)])


def rates_for_combos(U: np.ndarray, combos: np.ndarray) -> np.ndarray:
    """Departure rates for every row of ``U`` (``Q x N``) and every assortment (``Q x C``)."""
    return departure_rates(U[:, combos])
