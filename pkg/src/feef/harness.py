"""Experiment loop, baseline agents, configuration and metrics output."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import CoverageGrid, Env, make_env, REGISTRY
from .nets import ContractError
from .objective import PreferredPrior, ScoreBreakdown, score_candidates, score_rollout
from .planner import CemConfig, act, plan
from .world_model import ReplayBuffer, Transition, WorldModel, WorldModelConfig, train_world_model

log = logging.getLogger(__name__)

AGENT_KINDS = ("feef", "reward_only", "variance", "random")
METRICS_COLUMNS = ("seed", "episode", "return", "steps", "coverage",
                   "extrinsic_mean", "info_gain_mean", "wall_ms")
METRICS_SCHEMA_VERSION = 1

# purposes for independent random streams derived from (seed, episode)
_RESET, _TRAIN, _PLAN, _RANDOM = range(4)


def _ints(value) -> tuple:
    if isinstance(value, str):
        return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


def _bool(value) -> bool:
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"not a boolean: {value!r}")
    return bool(value)


@dataclass
class ExperimentConfig:
    """Everything a run depends on.  Defaults are the desk-scale setting."""

    env: str = "mountain_car"
    agent: str = "feef"
    episodes: int = 10
    seeds: tuple = (0,)
    ensemble_size: int = 5
    hidden: tuple = (64, 64)
    reward_hidden: tuple = (64, 64)
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    candidates: int = 200
    elites: int = 20
    iterations: int = 4
    horizon: int = 30
    mixture_samples: int = 10
    output: str = "runs/default"
    # measured wall time is nondeterministic; by default it only goes to timing.csv
    record_wall_ms: bool = False

    PAPER = dict(hidden=(400, 400), reward_hidden=(400, 400), candidates=700, elites=70, iterations=7)

    def __post_init__(self):
        self.seeds = _ints(self.seeds)
        self.hidden = _ints(self.hidden)
        self.reward_hidden = _ints(self.reward_hidden)
        for name in ("episodes", "ensemble_size", "epochs", "batch_size", "candidates",
                     "elites", "iterations", "horizon", "mixture_samples"):
            setattr(self, name, int(getattr(self, name)))
        self.learning_rate = float(self.learning_rate)
        self.record_wall_ms = _bool(self.record_wall_ms)
        self.validate()

    def validate(self):
        if self.env not in REGISTRY:
            raise ContractError(f"unknown env {self.env!r}; choose from {sorted(REGISTRY)}")
        if self.agent not in AGENT_KINDS:
            raise ContractError(f"unknown agent {self.agent!r}; choose from {AGENT_KINDS}")
        if self.episodes < 0:
            raise ContractError("episodes must be non-negative")
        if not self.seeds or any(s < 0 for s in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise ContractError("seeds must be a non-empty list of distinct non-negative integers")
        for name in ("ensemble_size", "epochs", "batch_size", "candidates", "elites",
                     "iterations", "horizon", "mixture_samples"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if not self.hidden or not self.reward_hidden or min(self.hidden + self.reward_hidden) < 1:
            raise ContractError("hidden layer sizes must be positive")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.agent == "feef" and self.ensemble_size < 2:
            raise ContractError("the feef agent needs ensemble_size >= 2")
        self.cem()
        return self

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict, paper_config=False) -> ExperimentConfig:
        unknown = set(values) - set(cls.keys())
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(cls.PAPER) if paper_config else {}
        merged.update(values)
        return cls(**merged)

    def world_model(self) -> WorldModelConfig:
        return WorldModelConfig(self.ensemble_size, self.hidden, self.reward_hidden,
                                self.epochs, self.learning_rate, self.batch_size)

    def cem(self) -> CemConfig:
        return CemConfig(self.candidates, self.elites, self.iterations, self.horizon)

    def to_text(self) -> str:
        lines = []
        for name in self.keys():
            v = getattr(self, name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{name}={v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment; dashes in keys read as underscores."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


@dataclass
class EpisodeRecord:
    seed: int
    episode: int
    ret: float
    steps: int
    coverage: float
    extrinsic_mean: float = float("nan")
    info_gain_mean: float = float("nan")
    wall_ms: float = 0.0
    degraded_steps: int = 0
    rewards: list = field(default_factory=list, repr=False)
    states: list = field(default_factory=list, repr=False)


def baseline_score(kind: str, rollout, prior: PreferredPrior, mixture_noise=None) -> np.ndarray:
    """Score every candidate of a batched rollout under agent ``kind``."""
    if kind == "random":
        raise ContractError("the random agent does not score rollouts")
    return score_rollout(rollout, prior, kind, mixture_noise).total


class Agent:
    """Chooses actions for one episode; ``kind`` is one of ``AGENT_KINDS``."""

    def __init__(self, kind: str, env: Env, config: ExperimentConfig, model: WorldModel | None = None):
        if kind not in AGENT_KINDS:
            raise ContractError(f"unknown agent kind {kind!r}")
        if kind != "random" and model is None:
            raise ContractError(f"the {kind} agent needs a trained model")
        self.kind = kind
        self.spec = env.spec
        self.config = config
        self.model = model
        self.prior = PreferredPrior(env.spec.r_max)

    def act(self, state, rng: np.random.Generator):
        """Return ``(action, breakdown of the chosen candidate or None, degraded)``."""
        low, high = self.spec.low, self.spec.high
        if self.kind == "random":
            return rng.uniform(low, high), None, False

        def score_fn(cands):
            return score_candidates(self.model, state, cands, self.prior, rng, self.kind,
                                    self.config.mixture_samples)

        dist, diag = plan(score_fn, low, high, self.config.cem(), rng)
        chosen = None
        if isinstance(diag.breakdown, ScoreBreakdown) and diag.elite_index is not None:
            b, i = diag.breakdown, diag.elite_index
            chosen = (float(b.extrinsic_kl[i].mean()), float(b.info_gain[i].mean()))
        return act(dist), chosen, diag.degraded


def _stream(seed, episode, purpose) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, episode, purpose]))


def run_episode(agent: Agent, env: Env, seed: int, episode: int, grid: CoverageGrid | None = None):
    """Run one episode, replanning every step.  Returns ``(EpisodeRecord, transitions)``.

    Episode ``-1`` is used for the random seed episode.  ``grid`` accumulates
    visited states across episodes when given.
    """
    t0 = time.perf_counter()
    rng = _stream(seed, episode + 1, _RANDOM if agent.kind == "random" else _PLAN)
    state = env.reset(int(np.random.SeedSequence([seed, episode + 1, _RESET]).generate_state(1)[0]))
    grid = grid if grid is not None else CoverageGrid.for_env(env.spec)
    grid.add(state)
    transitions, rewards, states = [], [], [state]
    ext, info = [], []
    degraded = 0
    done = False
    while not done:
        action, chosen, bad = agent.act(state, rng)
        degraded += bool(bad)
        if chosen is not None:
            ext.append(chosen[0])
            info.append(chosen[1])
        action = env.clip_action(action)
        nxt, reward, done = env.step(action)
        transitions.append(Transition(state, action, nxt, reward))
        rewards.append(reward)
        states.append(nxt)
        grid.add(nxt)
        state = nxt
    if degraded:
        log.warning("seed %d episode %d: planner degraded on %d steps", seed, episode, degraded)
    rec = EpisodeRecord(
        seed, episode, float(np.sum(rewards)), len(rewards), grid.fraction(),
        float(np.mean(ext)) if ext else float("nan"),
        float(np.mean(info)) if info else float("nan"),
        (time.perf_counter() - t0) * 1e3, degraded, rewards, states,
    )
    return rec, transitions


def run_seed(config: ExperimentConfig, seed: int, on_episode=None) -> list[EpisodeRecord]:
    """Seed episode with the random agent, then ``config.episodes`` agent episodes."""
    env = make_env(config.env)
    grid = CoverageGrid.for_env(env.spec)
    buffer = ReplayBuffer()
    rec, trans = run_episode(Agent("random", env, config), env, seed, -1, grid)
    buffer.extend(trans)
    records = [rec]
    for ep in range(config.episodes):
        t0 = time.perf_counter()
        model = None
        if config.agent != "random":
            model = train_world_model(buffer, config.world_model(), _stream(seed, ep + 1, _TRAIN))
            model = model.for_planning()
        train_ms = (time.perf_counter() - t0) * 1e3
        rec, trans = run_episode(Agent(config.agent, env, config, model), env, seed, ep, grid)
        rec.wall_ms += train_ms
        buffer.extend(trans)
        records.append(rec)
        log.info("seed %d episode %d: return %.3f coverage %.3f (%.1f s)",
                 seed, ep, rec.ret, rec.coverage, rec.wall_ms / 1e3)
        if on_episode is not None:
            on_episode(rec)
    return records


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def metrics_rows(records, record_wall_ms=False):
    """Agent episodes only; the random seed episode is in the trace but not the metrics."""
    for r in records:
        if r.episode < 0:
            continue
        yield [r.seed, r.episode, _fmt(r.ret), r.steps, _fmt(r.coverage), _fmt(r.extrinsic_mean),
               _fmt(r.info_gain_mean), _fmt(round(r.wall_ms, 3)) if record_wall_ms else "0"]


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def check_output_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every seed and write ``metrics.csv``, ``trace.csv``, ``timing.csv``, ``manifest.txt``.

    Returns a dict of seed -> list of EpisodeRecord.
    """
    config.validate()
    out = check_output_dir(config.output)
    results = {}
    for seed in config.seeds:
        results[seed] = run_seed(config, seed)

    every = [r for seed in config.seeds for r in results[seed]]
    _write_csv(out / "metrics.csv", METRICS_COLUMNS, metrics_rows(every, config.record_wall_ms))
    _write_csv(out / "timing.csv", ("seed", "episode", "wall_ms", "degraded_steps"),
               ([r.seed, r.episode, f"{r.wall_ms:.3f}", r.degraded_steps] for r in every))
    ds = make_env(config.env).spec.state_dim
    _write_csv(
        out / "trace.csv",
        ("seed", "episode", "step", "reward", *(f"s{i}" for i in range(ds))),
        ([r.seed, r.episode, t, _fmt(r.rewards[t - 1]) if t else "0.0", *(_fmt(v) for v in s)]
         for r in every for t, s in enumerate(r.states)),
    )
    (out / "manifest.txt").write_text(
        f"# feef run manifest, metrics schema v{METRICS_SCHEMA_VERSION}\n"
        f"# columns: {','.join(METRICS_COLUMNS)}\n" + config.to_text()
    )
    return results


def export_coverage(run_dir, seed=None, dest=None) -> Path:
    """Write visited-state points ``episode,step,s0,s1`` for one seed of a run.

    ``s0, s1`` are the environment's coverage dimensions.  The default seed is
    the first one in the run manifest.
    """
    run_dir = Path(run_dir)
    values = parse_config_text((run_dir / "manifest.txt").read_text())
    spec = make_env(values["env"]).spec
    if seed is None:
        seed = _ints(values["seeds"])[0]
    dims = spec.coverage_dims
    rows = []
    with open(run_dir / "trace.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if int(row["seed"]) == seed:
                rows.append([row["episode"], row["step"], row[f"s{dims[0]}"], row[f"s{dims[1]}"]])
    if not rows:
        raise ContractError(f"seed {seed} not found in {run_dir / 'trace.csv'}")
    dest = Path(dest) if dest else run_dir / f"coverage_points_seed{seed}.csv"
    _write_csv(dest, ("episode", "step", "s0", "s1"), rows)
    return dest
