"""Experiment configuration and multi-seed orchestration.

A config is a YAML file with nested sections; every key is optional and
falls back to the synthetic reference setup (d=5, N=5, K=1, lambda=0.7,
epsilon=0.03, T=1000, 10 runs)::

    instance:    {d, N, K, lambda, epsilon, pool_size, normalize_theta, env}
    tabular:     {n_clusters, rho, world_seed, embed_noise, perf_noise}
    policy:      {name, c1, lambda0, kappa, T_horizon}
    compare:     [policy names]
    run:         {T, runs, seed, workers}
    output:      {dir, plot, format}
    contrastive: {head, n_offline, per_model, epochs, learning_rate,
                  iota_pos, iota_neg, tau, K_neg, hidden, d_out, seed}

``env: tabular`` swaps the linear ground truth for tabulated departure
probabilities over synthetic prompt embeddings; ``contrastive.head`` points
to a trained projection head used as the learners' context map.
"""
from __future__ import annotations

import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .contrastive import balanced_sample, load_head, save_head, train_head, ProjectionHead
from .errors import ConfigError
from .metrics import aggregate, write_aggregate_csv, write_run_csv
from .plotting import emit_plot
from .policies import POLICY_NAMES, make_policy
from .queue_env import MnlInstance, TabularWorld, generate_instance, generate_tabular_instance
from .simulate import coupled_run

OUT_DIR_ENV = "ACQB_OUT_DIR"


@dataclass
class ExperimentConfig:
    d: int = 5
    N: int = 5
    K: int = 1
    lam: float = 0.7
    eps: float = 0.03
    pool_size: int = 1000
    normalize_theta: bool = False
    env: str = "linear"
    n_clusters: int = 5
    rho: float = 0.2
    world_seed: int = 0
    embed_noise: float = 0.6
    perf_noise: float = 0.1
    policy: str = "acqb_disjoint"
    c1: float = 1.0
    lambda0: float = 1.0
    kappa: float = 1.0
    T_horizon: Optional[int] = None
    compare: list = field(default_factory=lambda: ["acqb_disjoint", "cqb_eps", "random", "optimal"])
    T: int = 1000
    runs: int = 10
    seed: int = 0
    workers: int = 1
    out_dir: str = "out"
    plot: bool = True
    plot_format: str = "svg"
    head: Optional[str] = None
    n_offline: int = 500
    per_model: int = 5
    epochs: int = 10
    learning_rate: float = 1e-3
    iota_pos: float = 0.6
    iota_neg: float = 0.3
    tau: float = 0.07
    K_neg: int = 64
    hidden: int = 32
    d_out: int = 16
    train_seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if not 0 < self.lam < 1:
            raise ConfigError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.eps <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.eps}")
        if self.lam + self.eps >= 1:
            raise ConfigError(f"lambda + epsilon must be below 1, got {self.lam + self.eps}")
        if not 1 <= self.K <= self.N:
            raise ConfigError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")
        if self.d < 1 or self.pool_size < 1:
            raise ConfigError("d and pool_size must be positive")
        if self.T < 1 or self.runs < 1 or self.workers < 1:
            raise ConfigError("T, runs and workers must be at least 1")
        if self.env not in ("linear", "tabular"):
            raise ConfigError(f"env must be 'linear' or 'tabular', got {self.env!r}")
        for name in [self.policy, *self.compare]:
            if name not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
        if self.plot_format not in ("svg", "pdf"):
            raise ConfigError(f"plot format must be svg or pdf, got {self.plot_format!r}")
        if self.head is not None and not Path(self.head).is_file():
            raise ConfigError(f"projection head file not found: {self.head}")
        return self

    @property
    def horizon(self) -> int:
        return self.T if self.T_horizon is None else self.T_horizon


# YAML section -> {yaml key: config attribute}
_SECTIONS = {
    "instance": {"d": "d", "N": "N", "K": "K", "lambda": "lam", "epsilon": "eps",
                 "pool_size": "pool_size", "normalize_theta": "normalize_theta", "env": "env"},
    "tabular": {"n_clusters": "n_clusters", "rho": "rho", "world_seed": "world_seed",
                "embed_noise": "embed_noise", "perf_noise": "perf_noise"},
    "policy": {"name": "policy", "c1": "c1", "lambda0": "lambda0", "kappa": "kappa",
               "T_horizon": "T_horizon"},
    "run": {"T": "T", "runs": "runs", "seed": "seed", "workers": "workers"},
    "output": {"dir": "out_dir", "plot": "plot", "format": "plot_format"},
    "contrastive": {"head": "head", "n_offline": "n_offline", "per_model": "per_model",
                    "epochs": "epochs", "learning_rate": "learning_rate", "iota_pos": "iota_pos",
                    "iota_neg": "iota_neg", "tau": "tau", "K_neg": "K_neg", "hidden": "hidden",
                    "d_out": "d_out", "seed": "train_seed"},
}


def config_from_dict(data: Optional[dict], base_dir: Optional[Path] = None) -> ExperimentConfig:
    data = dict(data or {})
    values = {}
    compare = data.pop("compare", None)
    if compare is not None:
        if not isinstance(compare, list) or not compare:
            raise ConfigError("compare must be a non-empty list of policy names")
        values["compare"] = [str(p) for p in compare]
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in body.items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[_SECTIONS[section][key]] = value
    defaults = ExperimentConfig()
    for name, value in list(values.items()):
        default = getattr(defaults, name)
        if value is None or isinstance(default, (list, str)) or default is None:
            continue
        try:
            values[name] = type(default)(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name}: {value!r}") from exc
    if values.get("head") is not None and base_dir is not None and not Path(values["head"]).is_absolute():
        values["head"] = str(base_dir / values["head"])
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    return config_from_dict(data, base_dir=path.parent)


def run_seeds(master_seed: int, runs: int) -> list:
    """Per-run seeds derived deterministically from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(runs)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def tabular_world(config: ExperimentConfig) -> TabularWorld:
    return TabularWorld.generate(config.d, config.N, config.n_clusters, config.world_seed,
                                 rho=config.rho, embed_noise=config.embed_noise,
                                 perf_noise=config.perf_noise)


def build_instance(config: ExperimentConfig, seed: int) -> MnlInstance:
    if config.env == "tabular":
        return generate_tabular_instance(tabular_world(config), config.K, config.lam, config.eps,
                                         config.pool_size, seed)
    return generate_instance(config.d, config.N, config.K, config.lam, config.eps, config.pool_size,
                             seed, normalize_theta=config.normalize_theta)


def _policy(config: ExperimentConfig, name: str):
    return make_policy(name, T_horizon=config.horizon, c1=config.c1, lambda0=config.lambda0,
                       kappa=config.kappa)


def simulate_seed(config: ExperimentConfig, seed: int, policies) -> dict:
    """All ``policies`` on one instance with one shared environment stream."""
    instance = build_instance(config, seed)
    head = load_head(config.head) if config.head else None
    out = {}
    for name in policies:
        policy = _policy(config, name)
        context_map = head if policy.uses_context_map else None
        out[name] = coupled_run(instance, policy, config.T, seed, context_map=context_map)
    return out


def _simulate_all(config: ExperimentConfig, seeds, policies) -> list:
    if config.workers == 1 or len(seeds) == 1:
        return [simulate_seed(config, s, policies) for s in seeds]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(simulate_seed, [config] * len(seeds), seeds, [policies] * len(seeds)))


def resolve_out_dir(config: ExperimentConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.environ.get(OUT_DIR_ENV) or config.out_dir)


@dataclass
class ExperimentOutputs:
    out_dir: Path
    run_csvs: list
    aggregate_csv: Path
    manifest: Path
    plot: Optional[Path]
    aggregates: dict
    records: dict


def _execute(config: ExperimentConfig, policies: list, out_dir, with_policy_column: bool) -> ExperimentOutputs:
    started = time.time()
    out = resolve_out_dir(config, out_dir)
    seeds = run_seeds(config.seed, config.runs)
    results = _simulate_all(config, seeds, policies)
    run_csvs = []
    records = {name: [res[name] for res in results] for name in policies}
    for name in policies:
        for run_id, recs in enumerate(records[name]):
            stem = f"{name}_run_{run_id:03d}" if with_policy_column else f"run_{run_id:03d}"
            path = out / "runs" / f"{stem}.csv"
            write_run_csv(path, recs, run_id, name)
            run_csvs.append(path)
    aggregates = {name: aggregate(records[name]) for name in policies}
    agg_path = out / "aggregate.csv"
    write_aggregate_csv(agg_path, aggregates if with_policy_column else {None: aggregates[policies[0]]})
    plot_path = None
    if config.plot:
        plot_path = emit_plot(agg_path, out / f"aggregate.{config.plot_format}")
    manifest = {
        "config": asdict(config),
        "policies": policies,
        "run_seeds": seeds,
        "instance_per_seed": "one instance per seed, shared by all policies",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_seconds": round(time.time() - started, 3),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return ExperimentOutputs(out, run_csvs, agg_path, manifest_path, plot_path, aggregates, records)


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentOutputs:
    """Simulate ``config.policy`` over ``config.runs`` seeds and write CSVs, manifest, and plot."""
    return _execute(config, [config.policy], out_dir, with_policy_column=False)


def compare_policies(config: ExperimentConfig, out_dir=None) -> ExperimentOutputs:
    """Replay every policy in ``config.compare`` on identical instances and environment draws."""
    policies = list(dict.fromkeys(config.compare))
    return _execute(config, policies, out_dir, with_policy_column=len(policies) > 1)


def train_projection_head(config: ExperimentConfig, out_path, history: Optional[list] = None) -> ProjectionHead:
    """Fit a projection head on a balanced offline sample of the tabular world and save it."""
    world = tabular_world(config)
    rng = np.random.default_rng([config.train_seed, 4])
    emb, u, _ = world.sample(config.n_offline, rng)
    dataset = balanced_sample(emb, u, config.per_model, seed=config.train_seed)
    head = ProjectionHead.init(config.d, config.hidden, config.d_out, seed=config.train_seed)
    head = train_head(dataset, head, epochs=config.epochs, learning_rate=config.learning_rate,
                      iota_pos=config.iota_pos, iota_neg=config.iota_neg, tau=config.tau,
                      K_neg=config.K_neg, history=history)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_head(head, out_path)
    return head
