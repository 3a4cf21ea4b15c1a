"""Scheduling-and-routing policies.

Every policy answers one question per round: which pending job to serve and
with which assortment. Policies are built from parameters alone and bound to
an instance by :meth:`Policy.start`, which also hands them their private
random generator.

Argmax ties resolve to the earliest pending job, then the lexicographically
smallest assortment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import mnl
from .errors import ConfigError
from .estimator import (DisjointEstimator, SharedEstimator, optimistic_utilities, rates_for_combos,
                        sample_count)
from .queue_env import DUMMY, Job, MnlInstance, QueueState, RoundRandomness


@dataclass(frozen=True)
class PolicyDecision:
    query: Job
    assortment: tuple
    explored: bool = False

    @property
    def is_dummy(self) -> bool:
        return self.query.is_dummy


def eta(t: int, c1: float) -> float:
    """Forced-exploration probability ``min(1, c1 / sqrt(t + 1))``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return min(1.0, c1 / math.sqrt(t + 1))


class Policy:
    name = "policy"
    uses_context_map = False

    def start(self, instance: MnlInstance, rng: np.random.Generator,
              context_map: Optional[Callable] = None) -> "Policy":
        self.instance = instance
        self.rng = rng
        self.combos = instance.combos
        self.combo_arr = np.array(instance.combos)
        return self

    def decide(self, queue: QueueState, rand: RoundRandomness) -> PolicyDecision:
        raise NotImplementedError

    def update(self, decision: PolicyDecision, y: int, rand: RoundRandomness) -> None:
        pass


class OptimalPolicy(Policy):
    """Serves the pending job and assortment with the highest true departure rate."""

    name = "optimal"

    def decide(self, queue, rand):
        if not queue.pending:
            return PolicyDecision(DUMMY, self.combos[0])
        best = self.instance.best_R[queue.contexts()]
        i = int(np.argmax(best))
        job = queue.pending[i]
        return PolicyDecision(job, self.combos[int(self.instance.best_combo[job.idx])])


class RandomPolicy(Policy):
    name = "random"

    def decide(self, queue, rand):
        if not queue.pending:
            return PolicyDecision(DUMMY, self.combos[0])
        job = queue.pending[int(self.rng.integers(queue.Q))]
        return PolicyDecision(job, self.combos[int(self.rng.integers(len(self.combos)))])


class AcqbPolicy(Policy):
    """Thompson sampling with forced exploration on arrivals at a decaying rate.

    On a round following an arrival, if last round's exploration coin came up
    heads, the newest job is served with the next assortment in round-robin
    order. Otherwise ``M`` parameter samples are drawn and the (job, assortment)
    pair with the largest optimistic departure rate is served.

    With ``disjoint=False`` a single parameter vector is learned over the
    Kronecker features ``phi(x) kron e_j``; with ``disjoint=True`` each server
    keeps its own estimator.
    """

    name = "acqb"
    uses_context_map = True

    def __init__(self, c1: float = 1.0, lambda0: float = 1.0, kappa: float = 1.0, disjoint: bool = False):
        if c1 <= 0:
            raise ConfigError("c1 must be positive")
        self.c1, self.lambda0, self.kappa, self.disjoint = c1, lambda0, kappa, disjoint
        if disjoint:
            self.name = "acqb_disjoint"

    def start(self, instance, rng, context_map=None):
        super().start(instance, rng)
        pool = instance.pool if context_map is None else np.asarray(context_map(instance.pool))
        self.contexts = np.asarray(pool, dtype=float)
        self.dim = self.contexts.shape[1]
        N, K = instance.N, instance.K
        self.M = sample_count(K)
        self.c = 0
        self.coin = False
        self.round = 0
        if self.disjoint:
            self.estimator = DisjointEstimator(N, self.dim, K, self.lambda0, self.kappa)
        else:
            self.estimator = SharedEstimator(self.dim * N, K, self.lambda0, self.kappa)
        return self

    # exploration gate, overridden by the fixed-horizon baseline
    def _explore_now(self, queue: QueueState) -> bool:
        return queue.last_arrival is not None and self.coin

    def _coin_probability(self, t: int) -> float:
        return eta(t, self.c1)

    def next_assortment(self) -> tuple:
        S = self.combos[self.c]
        self.c = (self.c + 1) % len(self.combos)
        return S

    def context(self, job: Job) -> np.ndarray:
        return np.zeros(self.dim) if job.is_dummy else self.contexts[job.idx]

    def features(self, job: Job, S) -> np.ndarray:
        """Feature rows the estimator logs for the items of ``S``."""
        x = self.context(job)
        if self.disjoint:
            return np.tile(x, (len(S), 1))
        return mnl.kron_features(x, self.instance.N)[list(S)]

    def draw_samples(self) -> np.ndarray:
        """Parameter samples arranged per server (``N x M x dim``)."""
        if self.disjoint:
            return self.estimator.sample(self.M, self.rng)
        flat = self.estimator.sample(self.M, self.rng)
        N = self.instance.N
        # row a*N + j of a flat sample scores x_a for server j
        return flat.reshape(self.M, self.dim, N).transpose(2, 0, 1)

    def optimistic_scores(self, queue: QueueState, samples: np.ndarray) -> np.ndarray:
        """Optimistic departure rates for every pending job and assortment (``Q x C``)."""
        X = self.contexts[queue.contexts()]
        return rates_for_combos(optimistic_utilities(X, samples), self.combo_arr)

    def decide(self, queue, rand):
        self.round = queue.t
        if self._explore_now(queue):
            return PolicyDecision(queue.last_arrival, self.next_assortment(), explored=True)
        if not queue.pending:
            # dummy context scores every assortment equally
            return PolicyDecision(DUMMY, self.combos[0])
        scores = self.optimistic_scores(queue, self.draw_samples())
        flat = int(np.argmax(scores))
        i, s = divmod(flat, scores.shape[1])
        return PolicyDecision(queue.pending[i], self.combos[s])

    def update(self, decision, y, rand):
        if not decision.is_dummy:
            S = decision.assortment
            if self.disjoint:
                self.estimator.update(self.context(decision.query), S, y)
            else:
                self.estimator.update(self.features(decision.query, S), S, y)
        self.coin = rand.e_draw < self._coin_probability(self.round)


class CqbEpsPolicy(AcqbPolicy):
    """Fixed-horizon baseline: pure exploration on arrivals for ``tau = T/10`` rounds,
    then exploration on arrivals with probability ``T^{-1/2}``, otherwise the
    same optimistic Thompson rule as ACQB."""

    name = "cqb_eps"

    def __init__(self, T_horizon: int, c1: float = 1.0, lambda0: float = 1.0, kappa: float = 1.0,
                 disjoint: bool = True, tau: Optional[int] = None):
        if T_horizon < 1:
            raise ConfigError("CQB-eps needs a horizon T >= 1")
        super().__init__(c1=c1, lambda0=lambda0, kappa=kappa, disjoint=disjoint)
        self.name = "cqb_eps"
        self.T_horizon = int(T_horizon)
        self.tau = self.T_horizon // 10 if tau is None else int(tau)

    def _explore_now(self, queue):
        if queue.last_arrival is None:
            return False
        return queue.t <= self.tau or self.coin

    def _coin_probability(self, t):
        return self.T_horizon ** -0.5


def _mab_explore_probability(t: int, N: int) -> float:
    if t <= 1:
        return 1.0
    return min(1.0, 3.0 * N * math.log(t) ** 2 / t)


class _QueueingMab(Policy):
    """Context-blind single-server bandits with FIFO scheduling."""

    def start(self, instance, rng, context_map=None):
        if instance.K != 1:
            raise ConfigError(f"{self.name} supports K=1 only, got K={instance.K}")
        super().start(instance, rng)
        self.plays = np.zeros(instance.N, dtype=int)
        self.successes = np.zeros(instance.N, dtype=int)
        return self

    @property
    def means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.plays > 0, self.successes / np.maximum(self.plays, 1), 0.0)

    def explore_probability(self, t: int) -> float:
        return _mab_explore_probability(t, self.instance.N)

    def _arm_scores(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def decide(self, queue, rand):
        if not queue.pending:
            return PolicyDecision(DUMMY, self.combos[0])
        job = min(queue.pending, key=lambda p: p.stamp)
        t = queue.t
        if rand.e_draw < self.explore_probability(t):
            arm = int(self.rng.integers(self.instance.N))
            return PolicyDecision(job, (arm,), explored=True)
        return PolicyDecision(job, (int(np.argmax(self._arm_scores(t))),))

    def update(self, decision, y, rand):
        if decision.is_dummy:
            return
        arm = decision.assortment[0]
        self.plays[arm] += 1
        self.successes[arm] += int(y != 0)


def ucb_index(mean: float, plays: int, t: int) -> float:
    """``mean + sqrt(ln^2 t / (2 plays))``; unplayed arms score infinity."""
    if plays == 0:
        return math.inf
    return mean + math.sqrt(math.log(t) ** 2 / (2 * plays))


class QUcbPolicy(_QueueingMab):
    name = "qucb"

    def _arm_scores(self, t):
        return np.array([ucb_index(m, n, t) for m, n in zip(self.means, self.plays)])


class QThsPolicy(_QueueingMab):
    name = "qths"

    def _arm_scores(self, t):
        s = self.successes
        f = self.plays - self.successes
        return self.rng.beta(s + 1, f + 1)


POLICY_NAMES = ("acqb", "acqb_disjoint", "optimal", "random", "qucb", "qths", "cqb_eps")


def make_policy(name: str, T_horizon: Optional[int] = None, c1: float = 1.0,
                lambda0: float = 1.0, kappa: float = 1.0) -> Policy:
    """Build a policy from its config name."""
    if name == "acqb":
        return AcqbPolicy(c1=c1, lambda0=lambda0, kappa=kappa, disjoint=False)
    if name == "acqb_disjoint":
        return AcqbPolicy(c1=c1, lambda0=lambda0, kappa=kappa, disjoint=True)
    if name == "cqb_eps":
        if T_horizon is None:
            raise ConfigError("cqb_eps needs T_horizon")
        return CqbEpsPolicy(T_horizon, c1=c1, lambda0=lambda0, kappa=kappa)
    if name == "optimal":
        return OptimalPolicy()
    if name == "random":
        return RandomPolicy()
    if name == "qucb":
        return QUcbPolicy()
    if name == "qths":
        return QThsPolicy()
    raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
