"""Nested active-learning loop, strategy comparison matrix and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import agent as ag
from . import backends, lut as lutmod, reward as rw, strategies as st
from .pool import ALCycleState, CurvePoint, SamplePool, apply_selection, standardize_features

log = logging.getLogger(__name__)

CSV_HEADER = ("strategy", "seed", "cycle", "labeled", "performance")

# Adam lr for desk-scale runs (150 RL iterations per cycle instead of thousands);
# agent.DEFAULT_LR keeps the full-scale value.
DESK_LR = 3e-2

# Full-scale detection settings, for reference and for ExperimentConfig.full_scale.
FULL_SCALE_RL_ITERS = {"voc": 2200, "coco": 800}
FULL_SCALE_LUT_SIZE = 200
FULL_SCALE_EMBED_DIM = 256  # hidden width 257 with the prev-score input


class ConfigError(ValueError):
    pass


class MatrixError(RuntimeError):
    def __init__(self, message, completed):
        super().__init__(message)
        self.completed = completed


@dataclass
class ExperimentConfig:
    # backend
    backend: str = "cluster"
    n_clusters: int = 10
    per_cluster: int = 20
    dim: int = 8
    sigma: float = 0.25
    n_points: int = 200
    radius: float = 0.5
    noise: float = 0.0
    standardize: bool = True
    # protocol
    strategies: list = field(default_factory=lambda: list(st.STRATEGIES))
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    initial: int = 10
    budget: int = 10
    cycles: int = 5
    # agent
    rl_iters: int = 150
    lr: float = DESK_LR
    lam: float = rw.DEFAULT_LAMBDA
    baseline_mode: str = rw.AS_WRITTEN
    clip_norm: float = ag.DEFAULT_CLIP_NORM
    hidden: int | None = None
    warm_start: bool = False
    # lookup table
    lut_size: int = 60
    k: int = lutmod.DEFAULT_K
    lut_eps: float = lutmod.DEFAULT_EPS
    workers: int = 1
    out: str = "runs"

    @classmethod
    def full_scale(cls, dataset: str = "voc", **overrides) -> "ExperimentConfig":
        """Hyperparameters of the full detection setting (not runnable at desk scale)."""
        if dataset not in FULL_SCALE_RL_ITERS:
            raise ConfigError(f"unknown dataset {dataset!r}; expected one of {sorted(FULL_SCALE_RL_ITERS)}")
        base = dict(dim=FULL_SCALE_EMBED_DIM, lr=ag.DEFAULT_LR, lam=rw.DEFAULT_LAMBDA,
                    rl_iters=FULL_SCALE_RL_ITERS[dataset], lut_size=FULL_SCALE_LUT_SIZE)
        base.update(overrides)
        return cls(**base)

    @property
    def pool_size(self) -> int:
        if self.backend == "cluster":
            return self.n_clusters * self.per_cluster
        return self.n_points

    def validate(self) -> "ExperimentConfig":
        if self.backend not in ("cluster", "coverage"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        unknown = [s for s in self.strategies if s not in st.STRATEGIES]
        if unknown:
            raise ConfigError(f"unknown strategies {unknown}; choose from {list(st.STRATEGIES)}")
        if not self.strategies:
            raise ConfigError("need at least one strategy")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        for name in ("budget", "dim", "lut_size", "k", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("initial", "cycles", "rl_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.budget * self.cycles + self.initial > self.pool_size:
            raise ConfigError(
                f"budget*cycles + initial = {self.budget * self.cycles + self.initial} exceeds pool size {self.pool_size}"
            )
        if "entropy" in self.strategies and self.initial == 0:
            raise ConfigError("entropy strategy needs initial >= 1 labeled sample")
        if "mgral" in self.strategies and self.lut_size < 2:
            raise ConfigError("lut_size must be >= 2")
        if self.hidden is not None and self.hidden != self.dim + 1:
            raise ConfigError(f"hidden width is fixed to dim+1 = {self.dim + 1}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.baseline_mode not in rw.BASELINE_MODES:
            raise ConfigError(f"baseline_mode must be one of {rw.BASELINE_MODES}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if self.backend == "cluster" and (self.n_clusters < 2 or self.sigma <= 0 or self.per_cluster < 1):
            raise ConfigError("cluster backend needs n_clusters >= 2, per_cluster >= 1, sigma > 0")
        if self.backend == "coverage" and self.radius <= 0:
            raise ConfigError("radius must be positive")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        extra = set(obj) - names
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(obj)


def stream_rng(seed: int, name: str, t: int = 0) -> np.random.Generator:
    """Independent stream per (seed, name, cycle)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), int(t)])


def stream_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def make_world(config: ExperimentConfig, seed: int):
    ws = stream_seed(seed, "world")
    if config.backend == "cluster":
        return backends.generate_cluster_pool(config.n_clusters, config.per_cluster, config.dim, config.sigma, ws)
    return backends.generate_coverage_world(config.n_points, config.dim, config.radius, ws)


def initial_state(config: ExperimentConfig, world, seed: int) -> ALCycleState:
    pool = world.pool
    if config.standardize:
        pool = standardize_features(pool)
    rng = stream_rng(seed, "init")
    labeled = rng.choice(pool.n, size=config.initial, replace=False) if config.initial else []
    return ALCycleState(pool.with_labeled(labeled))


def make_oracle(config: ExperimentConfig, world):
    return backends.NoisyOracle(world, config.noise) if config.noise > 0 else world


@dataclass
class RunResult:
    points: list
    records: list  # (cycle, IterationRecord)
    agent: ag.AgentParams | None = None
    luts: list = field(default_factory=list)


def train_agent_cycle(config, state, oracle, rng, agent=None, on_record=None):
    """Build the cycle's lookup table and run the RL iterations.

    Returns ``(agent, lut, records)``.
    """
    if agent is None:
        agent = ag.init_agent(state.pool.dim, rng)
    reward = rw.RewardState(config.lam, config.baseline_mode)
    table = lutmod.build_lut(state, oracle, config.lut_size, config.budget, rng, workers=config.workers)
    est = lutmod.LUTEstimator(table, state.pool, oracle, config.k, config.lut_eps)
    records = []
    for i in range(config.rl_iters):
        agent, reward, rec = rw.rl_iteration(
            agent, state, reward, est, rng,
            budget=config.budget, iteration=i, lr=config.lr, clip_norm=config.clip_norm,
        )
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    return agent, table, records


def agent_select(agent, state, B, rng=None):
    """Deterministic top-B over one pass of the unlabeled pool.

    The visit order is a permutation drawn from ``rng`` (same distribution the
    agent was trained on); sorted ids when ``rng`` is None.
    """
    order = state.pool.unlabeled
    if rng is not None:
        order = rng.permutation(order)
    logits, _ = ag.score_pool(agent, state.pool, order)
    return ag.select_top_b(logits, B, ids=order)


def run_al_experiment(config: ExperimentConfig, strategy: str, seed: int, out_dir=None) -> RunResult:
    config.validate()
    if strategy not in config.strategies and strategy not in st.STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    world = make_world(config, seed)
    oracle = make_oracle(config, world)
    state = initial_state(config, world, seed)

    run_dir = None
    iter_log = None
    if out_dir is not None:
        run_dir = Path(out_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(config.to_json())
        backends.save_world(world, run_dir / "world.json")
        state.pool.save(run_dir / "pool.json")
        if strategy == "mgral":
            iter_log = open(run_dir / "iterations.jsonl", "w")

    def point(s):
        return CurvePoint(strategy, int(seed), s.cycle, len(s.pool.labeled), world.evaluate(s.pool))

    result = RunResult([point(state)], [])
    agent = None
    try:
        for t in range(config.cycles):
            rng = stream_rng(seed, strategy, t)
            B = config.budget
            if strategy == "random":
                batch = st.random_select(state, B, rng)
            elif strategy == "entropy":
                labeled = state.pool.labeled
                batch = st.entropy_select(state, B, lambda i: backends.predictive_distribution(world, labeled, i))
            elif strategy == "coreset":
                batch = st.kcenter_greedy(state, B)
            else:
                def on_record(rec, t=t):
                    result.records.append((t, rec))
                    if iter_log is not None:
                        iter_log.write(rec.to_json(cycle=t) + "\n")

                agent, table, _ = train_agent_cycle(
                    config, state, oracle, rng,
                    agent=agent if config.warm_start else None, on_record=on_record,
                )
                result.luts.append(table)
                if run_dir is not None:
                    table.save(run_dir / f"lut_cycle{t}.jsonl")
                batch = agent_select(agent, state, B, rng)
            state = apply_selection(state, batch)
            result.points.append(point(state))
            log.info("%s seed=%d cycle=%d labeled=%d perf=%.4f", strategy, seed, state.cycle,
                     len(state.pool.labeled), result.points[-1].performance)
    finally:
        if iter_log is not None:
            iter_log.close()

    result.agent = agent
    if run_dir is not None:
        if agent is not None:
            ag.save_checkpoint(agent, run_dir / "agent.json")
        write_curves(result.points, run_dir / "curve.csv")
    return result


def format_rows(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in sorted(points, key=lambda p: (p.strategy, p.seed, p.cycle)):
        w.writerow([p.strategy, p.seed, p.cycle, p.labeled, f"{p.performance:.17g}"])
    return buf.getvalue()


def write_curves(points, path) -> None:
    Path(path).write_text(format_rows(points))


class CurveParseError(ValueError):
    pass


def read_curves(path) -> list:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise CurveParseError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise CurveParseError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            points.append(CurvePoint(row[0], int(row[1]), int(row[2]), int(row[3]), float(row[4])))
        except ValueError as exc:
            raise CurveParseError(f"{path}:{lineno}: {exc}") from exc
    return points


def summarize(points) -> list:
    """Seed mean and population std per (strategy, cycle)."""
    groups = {}
    for p in points:
        groups.setdefault((p.strategy, p.cycle), []).append(p)
    rows = []
    for (strategy, cycle), ps in sorted(groups.items()):
        perf = [p.performance for p in ps]
        rows.append({
            "strategy": strategy,
            "cycle": cycle,
            "labeled": statistics.fmean(p.labeled for p in ps),
            "mean": statistics.fmean(perf),
            "std": statistics.pstdev(perf),
            "n": len(ps),
        })
    return rows


def write_summary(points, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "cycle", "labeled", "mean", "std", "n"])
    for r in summarize(points):
        w.writerow([r["strategy"], r["cycle"], f"{r['labeled']:.17g}", f"{r['mean']:.17g}", f"{r['std']:.17g}", r["n"]])
    Path(path).write_text(buf.getvalue())


def area_under_curve(points) -> float:
    """Trapezoid area of performance over labeled count, for one (strategy, seed) series."""
    ps = sorted(points, key=lambda p: p.cycle)
    x = np.array([p.labeled for p in ps], dtype=float)
    y = np.array([p.performance for p in ps])
    if len(ps) < 2:
        return 0.0
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def _cell(args):
    config, strategy, seed, out_dir = args
    return run_al_experiment(config, strategy, seed, out_dir).points


def compare_strategies(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> list:
    """Run every (strategy, seed) cell and write ``curves.csv`` + ``summary.csv``."""
    config.validate()
    cells = [(s, seed) for s in config.strategies for seed in config.seeds]
    root = Path(out_dir) if out_dir is not None else None
    args = [(config, s, seed, None if root is None else root / s / f"seed{seed}") for s, seed in cells]
    points, completed = [], []
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                for (s, seed), pts in zip(cells, ex.map(_cell, args)):
                    points.extend(pts)
                    completed.append((s, seed))
        else:
            for (s, seed), a in zip(cells, args):
                points.extend(_cell(a))
                completed.append((s, seed))
    except ConfigError:
        raise
    except Exception as exc:
        raise MatrixError(f"matrix aborted after {len(completed)}/{len(cells)} cells: {exc}", completed) from exc

    points.sort(key=lambda p: (p.strategy, p.seed, p.cycle))
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.json").write_text(config.to_json())
        write_curves(points, root / "curves.csv")
        write_summary(points, root / "summary.csv")
    return points
