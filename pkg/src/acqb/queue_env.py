"""Discrete-time single-queue environment with MNL departures.

Each round the agent serves one pending job with an assortment of servers.
The user either accepts an item (the job departs) or picks the outside option
(the job is retried next round). A new job arrives with probability ``lambda``.

Contexts come from a finite pool generated up front; a job stores the pool
index of its context, so ground-truth quantities are table lookups.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import mnl
from .errors import ContractViolation, DomainError, GenerationError

MAX_CONSECUTIVE_REJECTIONS = 1_000_000
STREAM_NAMES = ("arrival", "arrival_index", "exploration", "departure", "thompson")


@dataclass(eq=False)
class Job:
    """A pending query. ``idx`` indexes the context pool; -1 marks the dummy job."""

    uid: int
    idx: int
    stamp: int

    @property
    def is_dummy(self) -> bool:
        return self.idx < 0


DUMMY = Job(uid=-1, idx=-1, stamp=-1)


@dataclass
class MnlInstance:
    """Ground truth for one simulated system.

    ``Theta`` holds one parameter row per server (``N x d``). Tabular instances
    have no ``Theta``; their per-context, per-server utilities are given in
    ``utility_table`` instead and the pool holds the observable embeddings.
    """

    d: int
    N: int
    K: int
    lam: float
    eps: float
    pool: np.ndarray
    Theta: Optional[np.ndarray] = None
    utility_table: Optional[np.ndarray] = None
    seed: Optional[int] = None
    normalize_theta: bool = False
    kind: str = "linear"

    combos: list = field(init=False, repr=False)
    true_util: np.ndarray = field(init=False, repr=False)
    R_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.K <= self.N:
            raise DomainError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")
        if not 0 < self.lam < 1:
            raise DomainError(f"arrival probability must lie in (0, 1), got {self.lam}")
        self.pool = np.asarray(self.pool, dtype=float).reshape(-1, self.d)
        if self.utility_table is not None:
            self.true_util = np.asarray(self.utility_table, dtype=float)
        elif self.Theta is not None:
            self.Theta = np.asarray(self.Theta, dtype=float).reshape(self.N, self.d)
            self.true_util = self.pool @ self.Theta.T
        else:
            raise DomainError("instance needs either Theta or a utility table")
        if self.true_util.shape != (len(self.pool), self.N):
            raise DomainError(f"utility table shape {self.true_util.shape} != ({len(self.pool)}, {self.N})")
        self.combos = mnl.assortments(self.N, self.K)
        self.combo_index = {S: i for i, S in enumerate(self.combos)}
        self.R_table = mnl.departure_rates(self.true_util[:, np.array(self.combos)])
        self.best_combo = np.argmax(self.R_table, axis=1)
        self.best_R = self.R_table[np.arange(len(self.pool)), self.best_combo]

    @property
    def pool_size(self) -> int:
        return len(self.pool)

    def utilities(self, job: Job, S) -> np.ndarray:
        """True utilities of the servers in ``S`` for ``job`` (zeros for the dummy job)."""
        if job.is_dummy:
            return np.zeros(len(S))
        return self.true_util[job.idx, list(S)]

    def rate(self, idx: int, S) -> float:
        return float(self.R_table[idx, self.combo_index[tuple(S)]])

    def slackness_margin(self) -> np.ndarray:
        """Per-context ``max_S R(x, S) - lambda``."""
        return self.best_R - self.lam

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "d": self.d,
            "N": self.N,
            "K": self.K,
            "lambda": self.lam,
            "epsilon": self.eps,
            "seed": self.seed,
            "normalize_theta": self.normalize_theta,
            "pool": self.pool.tolist(),
        }
        if self.Theta is not None:
            out["Theta"] = self.Theta.tolist()
        if self.utility_table is not None:
            out["utility_table"] = np.asarray(self.utility_table).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MnlInstance":
        return cls(
            d=int(data["d"]),
            N=int(data["N"]),
            K=int(data["K"]),
            lam=float(data["lambda"]),
            eps=float(data["epsilon"]),
            pool=np.array(data["pool"], dtype=float),
            Theta=np.array(data["Theta"], dtype=float) if "Theta" in data else None,
            utility_table=np.array(data["utility_table"], dtype=float) if "utility_table" in data else None,
            seed=data.get("seed"),
            normalize_theta=bool(data.get("normalize_theta", False)),
            kind=data.get("kind", "linear"),
        )


def save_instance(instance: MnlInstance, path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=1) + "\n")


def load_instance(path) -> MnlInstance:
    return MnlInstance.from_dict(json.loads(Path(path).read_text()))


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.maximum(1.0, norms)


def generate_instance(d: int, N: int, K: int, lam: float, eps: float, pool_size: int,
                      seed: int, normalize_theta: bool = False,
                      batch: int = 4096) -> MnlInstance:
    """Random linear instance whose every pool context admits slackness ``eps``.

    Parameters and contexts are Unif(-1, 1) entrywise. Contexts are scaled to
    norm at most 1 and kept only if some assortment reaches departure rate
    ``lam + eps``.
    """
    if eps <= 0 or lam + eps >= 1:
        raise DomainError(f"need eps > 0 and lambda + eps < 1, got lambda={lam}, eps={eps}")
    if pool_size < 1:
        raise DomainError("pool_size must be positive")
    rng = np.random.default_rng([seed, 0])
    Theta = rng.uniform(-1.0, 1.0, size=(N, d))
    if normalize_theta:
        Theta = _normalize_rows(Theta)
    combos = np.array(mnl.assortments(N, K))
    accepted: list[np.ndarray] = []
    failures = 0
    while len(accepted) < pool_size:
        cand = _normalize_rows(rng.uniform(-1.0, 1.0, size=(batch, d)))
        best = mnl.departure_rates((cand @ Theta.T)[:, combos]).max(axis=1)
        for ok, x in zip(best >= lam + eps, cand):
            if ok:
                accepted.append(x)
                failures = 0
                if len(accepted) == pool_size:
                    break
            else:
                failures += 1
                if failures > MAX_CONSECUTIVE_REJECTIONS:
                    raise GenerationError(
                        f"no context reached departure rate {lam + eps} in "
                        f"{MAX_CONSECUTIVE_REJECTIONS} consecutive draws")
    return MnlInstance(d=d, N=N, K=K, lam=lam, eps=eps, pool=np.array(accepted),
                       Theta=Theta, seed=seed, normalize_theta=normalize_theta)


@dataclass
class TabularWorld:
    """Synthetic prompt population with per-server performance and cost.

    Prompts belong to latent clusters. A prompt's observable embedding is a
    noisy copy of its cluster center; its performance on each server is the
    cluster's profile plus noise. Departure probabilities follow the
    performance/cost transform in :func:`acqb.mnl.utility_from_perf_cost`.
    """

    d: int
    N: int
    centers: np.ndarray
    profiles: np.ndarray
    costs: np.ndarray
    rho: float = 0.2
    embed_noise: float = 0.6
    perf_noise: float = 0.1
    r_lo: float = mnl.R_LO
    r_hi: float = mnl.R_HI

    @classmethod
    def generate(cls, d: int, N: int, n_clusters: int, seed: int, **kw) -> "TabularWorld":
        rng = np.random.default_rng([seed, 2])
        centers = rng.standard_normal((n_clusters, d))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        profiles = rng.uniform(0.0, 1.0, size=(n_clusters, N))
        costs = rng.uniform(0.0, 1.0, size=N)
        return cls(d=d, N=N, centers=centers, profiles=profiles, costs=costs, **kw)

    def sample(self, n: int, rng: np.random.Generator):
        """Draw ``n`` prompts: (embeddings, departure probabilities, cluster ids)."""
        cluster = rng.integers(len(self.centers), size=n)
        emb = self.centers[cluster] + self.embed_noise * rng.standard_normal((n, self.d))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        perf = np.clip(self.profiles[cluster] + self.perf_noise * rng.standard_normal((n, self.N)), 0.0, 1.0)
        cost = np.broadcast_to(self.costs, perf.shape)
        u = mnl.utility_from_perf_cost(perf, cost, self.rho, self.r_lo, self.r_hi)
        return emb, u, cluster


def generate_tabular_instance(world: TabularWorld, K: int, lam: float, eps: float,
                              pool_size: int, seed: int) -> MnlInstance:
    """Instance whose true utilities are log-odds of tabulated departure probabilities.

    Contexts violating the slackness margin are kept but reported with a warning.
    """
    rng = np.random.default_rng([seed, 3])
    emb, u, _ = world.sample(pool_size, rng)
    inst = MnlInstance(d=world.d, N=world.N, K=K, lam=lam, eps=eps, pool=emb,
                       utility_table=mnl.log_odds(u), seed=seed, kind="tabular")
    short = int(np.sum(inst.slackness_margin() < eps))
    if short:
        warnings.warn(f"{short} of {pool_size} tabular contexts miss the slackness margin "
                      f"lambda + eps = {lam + eps}", RuntimeWarning, stacklevel=2)
    return inst


# queue dynamics ---------------------------------------------------------


@dataclass
class QueueState:
    """Pending jobs in arrival order, the current round, and last round's arrival."""

    pending: list = field(default_factory=list)
    t: int = 1
    last_arrival: Optional[Job] = None
    next_uid: int = 0

    @property
    def Q(self) -> int:
        return len(self.pending)

    def contexts(self) -> np.ndarray:
        return np.fromiter((job.idx for job in self.pending), dtype=int, count=len(self.pending))


@dataclass(frozen=True)
class RoundRandomness:
    a_draw: float
    arrival_index: int
    e_draw: float
    u_depart: float


class RandomStreams:
    """Named, independent generators derived from one run seed.

    ``thompson`` is reserved for policy-internal sampling, so a policy drawing
    more or fewer variates never shifts the environment's draws.
    """

    def __init__(self, seed: int):
        children = np.random.SeedSequence([seed, 1]).spawn(len(STREAM_NAMES))
        for name, child in zip(STREAM_NAMES, children):
            setattr(self, name, np.random.default_rng(child))

    def draw_round(self, pool_size: int) -> RoundRandomness:
        return RoundRandomness(
            a_draw=float(self.arrival.random()),
            arrival_index=int(self.arrival_index.integers(pool_size)),
            e_draw=float(self.exploration.random()),
            u_depart=float(self.departure.random()),
        )


def step(state: QueueState, decision, rand: RoundRandomness, instance: MnlInstance):
    """Play one round in place; returns ``(state, D, y)``.

    ``y`` is the chosen item's 1-based position in the assortment, 0 for the
    outside option. Dummy rounds still evaluate the threshold rule on
    ``u_depart`` but nothing leaves the queue.
    """
    job = decision.query
    if job.is_dummy:
        if state.Q:
            raise ContractViolation(f"dummy job served while {state.Q} jobs are pending")
    else:
        if not any(p is job for p in state.pending):
            raise ContractViolation(f"job {job.uid} is not pending")
    dist = mnl.choice_probs(instance.utilities(job, decision.assortment))
    y = mnl.sample_choice(dist, rand.u_depart)
    D = int(y != 0)
    if D and not job.is_dummy:
        state.pending = [p for p in state.pending if p is not job]
    if rand.a_draw < instance.lam:
        new = Job(uid=state.next_uid, idx=rand.arrival_index, stamp=state.t)
        state.next_uid += 1
        state.pending.append(new)
        state.last_arrival = new
    else:
        state.last_arrival = None
    state.t += 1
    return state, D, y

