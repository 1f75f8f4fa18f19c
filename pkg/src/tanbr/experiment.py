"""Config-driven experiment harness: replications, metrics, CSV output.

A JSON config names an environment, a list of policies, a horizon, seeds,
and a task-feature schedule. Each (policy, seed) pair runs in isolation
with its own rng streams split from the seed, so replications are
order-insensitive and may execute in parallel processes. Round records
stream to one CSV per replication; aggregation emits regret checkpoints
and final per-task rewards.
"""
from __future__ import annotations

import concurrent.futures
import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bandit import BanditConfig, RoundRecord
from .baselines import make_policy
from .environments import check_task_feature, environment_from_spec, TaskMonitor
from .partition import TreeConfig
from .reward_net import NetConfig, TrainConfig

# Paper-default hyperparameters; rho and eta sit at the midpoints of the
# searched grids {0.3,0.5,0.7,0.9} and {1e-4..1e-1}.
DEFAULTS = {
    "smoothness_nu1": 1.0,
    "smoothness_rho": 0.5,
    "threshold_const": 1.0,
    "confidence_delta": 1.0,
    "regularization": 1.0,
    "exploration_nu": 1.0,
    "norm_param": 1.0,
    "width": 64,
    "depth": 2,
    "step_size": 1e-3,
    "sgd_steps_per_round": 50,
    "max_experts_b": 8,
    "nucb_candidates": 20,
}

KNOWN_POLICY_IDS = ("tanbr", "nucb", "average", "random")


class ConfigError(ValueError):
    """Validation failure; the message starts with the offending field path."""


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict
    policies: tuple
    horizon: int
    replications: int
    seeds: tuple
    schedule: dict
    out_dir: str
    tree: TreeConfig
    net: NetConfig
    bandit: BanditConfig
    train: TrainConfig
    nucb_candidates: int = 20
    parallel: bool = False

    def to_dict(self) -> dict:
        return {
            "environment": dict(self.environment),
            "policies": list(self.policies),
            "horizon": self.horizon,
            "replications": self.replications,
            "seeds": list(self.seeds),
            "schedule": dict(self.schedule),
            "out_dir": self.out_dir,
            "tree": {
                "num_experts": self.tree.num_experts,
                "smoothness_nu1": self.tree.smoothness_nu1,
                "smoothness_rho": self.tree.smoothness_rho,
                "threshold_const": self.tree.threshold_const,
                "confidence_delta": self.tree.confidence_delta,
                "max_experts_b": self.tree.max_experts_b,
            },
            "net": {
                "width": self.net.width,
                "depth": self.net.depth,
            },
            "bandit": {
                "regularization": self.bandit.regularization,
                "exploration_nu": self.bandit.exploration_nu,
                "norm_param": self.bandit.norm_param,
                "confidence_delta": self.bandit.confidence_delta,
                "gamma_mode": self.bandit.gamma_mode,
                "gamma_constant": self.bandit.gamma_constant,
                "refresh_interval": self.bandit.refresh_interval,
                "diagonal_z": self.bandit.diagonal_z,
            },
            "train": {
                "step_size": self.train.step_size,
                "regularization": self.train.regularization,
                "sgd_steps_per_round": self.train.sgd_steps_per_round,
                "history_cap": self.train.history_cap,
            },
            "nucb_candidates": self.nucb_candidates,
            "parallel": self.parallel,
        }


def _expand_shorthand(data: dict) -> dict:
    """Accept the flat minimal form {env, K, V, T, ...} alongside the full one."""
    data = dict(data)
    if "env" in data and "environment" not in data:
        env = {"kind": data.pop("env")}
        for key in ("K", "V", "noise_sigma", "seed", "params", "grid_resolution", "m"):
            if key in data:
                env[key] = data.pop(key)
        data["environment"] = env
    if "T" in data and "horizon" not in data:
        data["horizon"] = data.pop("T")
    return data


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def config_from_dict(data: dict) -> ExperimentConfig:
    """Fill defaults and validate; errors carry the offending field path."""
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    data = _expand_shorthand(data)

    env = data.get("environment")
    _require(isinstance(env, dict), "environment", "required object")
    _require("kind" in env, "environment.kind", "required")
    _require("K" in env, "environment.K", "required")
    _require("V" in env, "environment.V", "required")
    k = int(env["K"])
    v = int(env["V"])
    _require(k >= 2, "environment.K", f"must be >= 2, got {k}")
    _require(v >= 1, "environment.V", f"must be >= 1, got {v}")

    horizon = data.get("horizon")
    _require(horizon is not None, "horizon", "required")
    horizon = int(horizon)
    _require(horizon >= 1, "horizon", f"must be >= 1, got {horizon}")

    seeds = data.get("seeds")
    replications = data.get("replications")
    if seeds is None:
        replications = int(replications) if replications is not None else 1
        _require(replications >= 1, "replications", "must be >= 1")
        seeds = list(range(replications))
    else:
        seeds = [int(s) for s in seeds]
        _require(len(seeds) >= 1, "seeds", "must be nonempty")
        if replications is None:
            replications = len(seeds)
        _require(
            int(replications) == len(seeds),
            "seeds",
            f"length {len(seeds)} must equal replications {replications}",
        )
        replications = int(replications)

    policies = list(data.get("policies", ["tanbr"]))
    _require(len(policies) >= 1, "policies", "must be nonempty")
    for pid in policies:
        ok = pid in KNOWN_POLICY_IDS or (
            pid.startswith("fixed:") and pid.split(":", 1)[1].isdigit()
        )
        _require(ok, "policies", f"unknown policy id {pid!r}")
        if pid.startswith("fixed:"):
            _require(
                1 <= int(pid.split(":", 1)[1]) <= k,
                "policies",
                f"{pid!r} expert index out of range 1..{k}",
            )

    tree_in = dict(data.get("tree", {}))
    b_default = min(DEFAULTS["max_experts_b"], k)
    try:
        tree = TreeConfig(
            num_experts=k,
            smoothness_nu1=float(tree_in.get("smoothness_nu1", DEFAULTS["smoothness_nu1"])),
            smoothness_rho=float(tree_in.get("smoothness_rho", DEFAULTS["smoothness_rho"])),
            threshold_const=float(tree_in.get("threshold_const", DEFAULTS["threshold_const"])),
            confidence_delta=float(tree_in.get("confidence_delta", DEFAULTS["confidence_delta"])),
            max_experts_b=int(tree_in.get("max_experts_b", b_default)),
        )
    except ValueError as exc:
        raise ConfigError(f"tree.{exc}") from exc

    net_in = dict(data.get("net", {}))
    try:
        net = NetConfig(
            input_dim=k,
            output_dim=v,
            width=int(net_in.get("width", DEFAULTS["width"])),
            depth=int(net_in.get("depth", DEFAULTS["depth"])),
        )
    except ValueError as exc:
        raise ConfigError(f"net.{exc}") from exc

    bandit_in = dict(data.get("bandit", {}))
    try:
        bandit = BanditConfig(
            regularization=float(bandit_in.get("regularization", DEFAULTS["regularization"])),
            exploration_nu=float(bandit_in.get("exploration_nu", DEFAULTS["exploration_nu"])),
            norm_param=float(bandit_in.get("norm_param", DEFAULTS["norm_param"])),
            confidence_delta=float(
                bandit_in.get("confidence_delta", DEFAULTS["confidence_delta"])
            ),
            gamma_mode=bandit_in.get("gamma_mode", "practical"),
            gamma_constant=float(bandit_in.get("gamma_constant", 1.0)),
            refresh_interval=int(bandit_in.get("refresh_interval", 500)),
            diagonal_z=bool(bandit_in.get("diagonal_z", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"bandit.{exc}") from exc

    train_in = dict(data.get("train", {}))
    try:
        train = TrainConfig(
            step_size=float(train_in.get("step_size", DEFAULTS["step_size"])),
            regularization=float(
                train_in.get("regularization", bandit.regularization)
            ),
            sgd_steps_per_round=int(
                train_in.get("sgd_steps_per_round", DEFAULTS["sgd_steps_per_round"])
            ),
            history_cap=train_in.get("history_cap"),
            seed=train_in.get("seed"),
        )
    except ValueError as exc:
        raise ConfigError(f"train.{exc}") from exc

    schedule = dict(data.get("schedule", {"kind": "fixed"}))
    kind = schedule.setdefault("kind", "fixed")
    _require(
        kind in ("fixed", "drifting", "monitor"),
        "schedule.kind",
        f"must be fixed, drifting, or monitor, got {kind!r}",
    )
    if kind == "fixed" and "psi" in schedule:
        try:
            check_task_feature(np.asarray(schedule["psi"], dtype=np.float64), v)
        except ValueError as exc:
            raise ConfigError(f"schedule.psi: {exc}") from exc

    nucb_candidates = int(data.get("nucb_candidates", DEFAULTS["nucb_candidates"]))
    _require(nucb_candidates >= 1, "nucb_candidates", "must be >= 1")

    return ExperimentConfig(
        environment=env,
        policies=tuple(policies),
        horizon=horizon,
        replications=replications,
        seeds=tuple(seeds),
        schedule=schedule,
        out_dir=str(data.get("out_dir", "tanbr_results")),
        tree=tree,
        net=net,
        bandit=bandit,
        train=train,
        nucb_candidates=nucb_candidates,
        parallel=bool(data.get("parallel", False)),
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment config file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)


# --- task-feature schedules ---------------------------------------------


def _default_endpoints(v: int) -> tuple[np.ndarray, np.ndarray]:
    """Dominant mass on the first task early, on the last task late."""
    start = np.full(v, 0.3 / max(v - 1, 1))
    start[0] = 0.7
    end = np.full(v, 0.3 / max(v - 1, 1))
    end[-1] = 0.7
    if v == 1:
        start = np.array([1.0])
        end = np.array([1.0])
    return start / start.sum(), end / end.sum()


class FixedSchedule:
    def __init__(self, psi: np.ndarray):
        self.psi_value = np.asarray(psi, dtype=np.float64)

    def psi(self, t: int, rng: np.random.Generator) -> np.ndarray:
        return self.psi_value.copy()


class DriftingSchedule:
    """Linear interpolation between two task distributions over the horizon."""

    def __init__(self, start: np.ndarray, end: np.ndarray, horizon: int):
        self.start = np.asarray(start, dtype=np.float64)
        self.end = np.asarray(end, dtype=np.float64)
        self.horizon = horizon

    def psi(self, t: int, rng: np.random.Generator) -> np.ndarray:
        u = 0.0 if self.horizon <= 1 else (t - 1) / (self.horizon - 1)
        mix = (1.0 - u) * self.start + u * self.end
        return mix / mix.sum()


class MonitorSchedule:
    """Simulated task stream per slot, summarized by the CMS+EMA monitor.

    The latent distribution switches from `start` to `end` halfway through
    the horizon, so the emitted features track a dominant-task flip.
    """

    def __init__(
        self,
        num_tasks: int,
        horizon: int,
        start: np.ndarray,
        end: np.ndarray,
        slot_size: int = 200,
        alpha: float = 0.5,
        cms_width: int = 64,
        cms_depth: int = 4,
        monitor_seed: int = 0,
        flip_at: Optional[int] = None,
    ):
        self.V = num_tasks
        self.horizon = horizon
        self.start = np.asarray(start, dtype=np.float64)
        self.end = np.asarray(end, dtype=np.float64)
        self.slot_size = slot_size
        self.flip_at = flip_at if flip_at is not None else max(1, horizon // 2)
        self.monitor = TaskMonitor(
            num_tasks, alpha=alpha, cms_width=cms_width, cms_depth=cms_depth, seed=monitor_seed
        )

    def psi(self, t: int, rng: np.random.Generator) -> np.ndarray:
        latent = self.start if t <= self.flip_at else self.end
        stream = rng.choice(self.V, size=self.slot_size, p=latent)
        return self.monitor.slot_feature(stream)


def make_schedule(spec: dict, num_tasks: int, horizon: int):
    kind = spec.get("kind", "fixed")
    if kind == "fixed":
        psi = spec.get("psi")
        if psi is None:
            psi = np.full(num_tasks, 1.0 / num_tasks)
        return FixedSchedule(check_task_feature(np.asarray(psi, dtype=np.float64), num_tasks))
    start, end = _default_endpoints(num_tasks)
    start = np.asarray(spec.get("psi_start", start), dtype=np.float64)
    end = np.asarray(spec.get("psi_end", end), dtype=np.float64)
    check_task_feature(start, num_tasks)
    check_task_feature(end, num_tasks)
    if kind == "drifting":
        return DriftingSchedule(start, end, horizon)
    return MonitorSchedule(
        num_tasks,
        horizon,
        start,
        end,
        slot_size=int(spec.get("slot_size", 200)),
        alpha=float(spec.get("alpha", 0.5)),
        cms_width=int(spec.get("cms_width", 64)),
        cms_depth=int(spec.get("cms_depth", 4)),
        monitor_seed=int(spec.get("monitor_seed", 0)),
        flip_at=spec.get("flip_at"),
    )


# --- replication execution ------------------------------------------------


@dataclass
class RunSummary:
    """Everything measured for one (policy, seed) replication."""

    policy_id: str
    seed: int
    horizon: int
    records: list = field(default_factory=list)
    cumulative_regret: Optional[np.ndarray] = None
    final_avg_reward_per_task: Optional[np.ndarray] = None
    tree_depth_series: Optional[np.ndarray] = None
    leaf_count_series: Optional[np.ndarray] = None
    wall_clock_per_round: Optional[np.ndarray] = None
    error: Optional[str] = None


def run_replication(config: ExperimentConfig, policy_id: str, seed: int) -> RunSummary:
    """One policy on one seed for the full horizon, fully self-contained."""
    env_ss, policy_ss, schedule_ss = np.random.SeedSequence(seed).spawn(3)
    env = environment_from_spec(config.environment, max_experts_b=config.tree.max_experts_b)
    rng = np.random.default_rng(policy_ss)
    env_rng = np.random.default_rng(env_ss)
    schedule_rng = np.random.default_rng(schedule_ss)
    policy = make_policy(
        policy_id,
        config.tree,
        config.net,
        config.bandit,
        config.train,
        init_rng=rng,
        n_candidates=config.nucb_candidates,
    )
    schedule = make_schedule(config.schedule, env.V, config.horizon)
    is_tree = policy_id == "tanbr"

    records: list[RoundRecord] = []
    reward_sum = np.zeros(env.V)
    regrets = [] if env.has_oracle else None
    for t in range(1, config.horizon + 1):
        start = time.perf_counter()
        psi = schedule.psi(t, schedule_rng)
        x = policy.select(psi, t, rng)
        reward = env.observe(x, env_rng)
        regret = None
        if env.has_oracle:
            _, oracle_value = env.oracle(psi)
            regret = oracle_value - float(psi @ env.noiseless(x))
            regrets.append(regret)
        policy.update(x, reward, rng)
        info = policy.info()
        reward_sum += reward
        records.append(
            RoundRecord(
                t=t,
                chosen_depth=info["chosen_depth"],
                chosen_index=info["chosen_index"],
                weight=x,
                scalar_reward=float(psi @ reward),
                per_task_reward=reward,
                regret=regret,
                n_candidates=info["n_candidates"],
                tree_max_depth=info["tree_max_depth"],
                gamma=info["gamma"],
                wall_clock=time.perf_counter() - start,
            )
        )

    return RunSummary(
        policy_id=policy_id,
        seed=seed,
        horizon=config.horizon,
        records=records,
        cumulative_regret=(None if regrets is None else np.cumsum(regrets)),
        final_avg_reward_per_task=reward_sum / config.horizon,
        tree_depth_series=(
            np.array([r.tree_max_depth for r in records]) if is_tree else None
        ),
        leaf_count_series=(
            np.array([r.n_candidates for r in records]) if is_tree else None
        ),
        wall_clock_per_round=np.array([r.wall_clock for r in records]),
    )


def _replication_task(payload: tuple) -> RunSummary:
    config, policy_id, seed = payload
    try:
        return run_replication(config, policy_id, seed)
    except Exception as exc:  # isolate failures per replication
        return RunSummary(
            policy_id=policy_id,
            seed=seed,
            horizon=config.horizon,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(config: ExperimentConfig) -> list[RunSummary]:
    """All (policy, seed) replications; failures are recorded, not raised."""
    tasks = [(config, pid, seed) for pid in config.policies for seed in config.seeds]
    if config.parallel and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor() as pool:
            return list(pool.map(_replication_task, tasks))
    return [_replication_task(t) for t in tasks]


# --- aggregation and CSV output -------------------------------------------


def regret_checkpoints(horizon: int) -> list[int]:
    points = sorted({max(1, horizon // 10), max(1, horizon // 4), max(1, horizon // 2), horizon})
    return points


def aggregate(summaries: list[RunSummary]) -> dict:
    """Per-policy regret checkpoints and final per-task reward tables."""
    ok = [s for s in summaries if s.error is None]
    if not ok:
        raise ValueError("no successful replications to aggregate")
    horizons = {s.horizon for s in ok}
    if len(horizons) != 1:
        raise ValueError(f"mismatched horizons: {sorted(horizons)}")
    horizon = horizons.pop()
    checkpoints = regret_checkpoints(horizon)
    policies = sorted({s.policy_id for s in ok})

    regret_rows = []
    reward_rows = []
    for pid in policies:
        group = [s for s in ok if s.policy_id == pid]
        for t in checkpoints:
            values = [
                float(s.cumulative_regret[t - 1])
                for s in group
                if s.cumulative_regret is not None
            ]
            regret_rows.append(
                {
                    "policy": pid,
                    "checkpoint_t": t,
                    "mean_cum_regret": (np.mean(values) if values else None),
                    "std_cum_regret": (np.std(values) if values else None),
                }
            )
        rewards = np.stack([s.final_avg_reward_per_task for s in group])
        for v in range(rewards.shape[1]):
            reward_rows.append(
                {
                    "policy": pid,
                    "task": v,
                    "mean_final_reward": float(rewards[:, v].mean()),
                    "std_final_reward": float(rewards[:, v].std()),
                }
            )
    return {"regret": regret_rows, "final_reward": reward_rows}


def round_csv_header(num_experts: int) -> list[str]:
    return (
        ["t", "chosen_depth", "chosen_index"]
        + [f"weight_{i}" for i in range(num_experts)]
        + ["scalar_reward", "regret", "n_candidates", "tree_max_depth", "gamma"]
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _safe_name(policy_id: str) -> str:
    return policy_id.replace(":", "-")


def write_round_csv(summary: RunSummary, num_experts: int, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(round_csv_header(num_experts))
        for r in summary.records:
            writer.writerow(
                [_fmt(r.t), _fmt(r.chosen_depth), _fmt(r.chosen_index)]
                + [_fmt(w) for w in r.weight]
                + [
                    _fmt(r.scalar_reward),
                    _fmt(r.regret),
                    _fmt(r.n_candidates),
                    _fmt(r.tree_max_depth),
                    _fmt(r.gamma),
                ]
            )


def write_outputs(config: ExperimentConfig, summaries: list[RunSummary], out_dir) -> dict:
    """Round CSVs, aggregate CSVs, failure log, and the resolved-config sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = config.tree.num_experts
    paths = {"rounds": []}

    for s in summaries:
        if s.error is not None:
            continue
        path = out / f"rounds_{_safe_name(s.policy_id)}_{s.seed}.csv"
        write_round_csv(s, k, path)
        paths["rounds"].append(str(path))

    tables = aggregate(summaries)
    regret_path = out / "aggregate_regret.csv"
    with open(regret_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "checkpoint_t", "mean_cum_regret", "std_cum_regret"])
        for row in tables["regret"]:
            writer.writerow(
                [
                    row["policy"],
                    row["checkpoint_t"],
                    _fmt(row["mean_cum_regret"]),
                    _fmt(row["std_cum_regret"]),
                ]
            )
    paths["aggregate_regret"] = str(regret_path)

    reward_path = out / "final_reward_per_task.csv"
    with open(reward_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "task", "mean_final_reward", "std_final_reward"])
        for row in tables["final_reward"]:
            writer.writerow(
                [
                    row["policy"],
                    row["task"],
                    _fmt(row["mean_final_reward"]),
                    _fmt(row["std_final_reward"]),
                ]
            )
    paths["final_reward"] = str(reward_path)

    failures = [
        {"policy": s.policy_id, "seed": s.seed, "error": s.error}
        for s in summaries
        if s.error is not None
    ]
    if failures:
        failure_path = out / "failures.json"
        failure_path.write_text(json.dumps(failures, indent=2))
        paths["failures"] = str(failure_path)

    sidecar = out / "config.json"
    sidecar.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    paths["config"] = str(sidecar)
    return paths
