"""Experiment runner: single runs, parameter sweeps and regret scaling.

Time is counted in engine slots.  Policies decide once per epoch of two
slots: the ``+delta`` job of every class enters in the first slot and the
``-delta`` job in the second, so each slot carries one job per class and
``T * OPT`` remains an upper bound on the delivered utility.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from .errors import BenchmarkViolation, ConfigurationError
from .network import Simulator
from .oracle import solve_opt
from .policies import PolicyParams, make_policy, schedule_params
from .scenarios import build_scenario

log = logging.getLogger(__name__)

BENCHMARK_TOL = 1e-6

DEFAULT_CONFIG = {
    "scenario": {"tag": "database", "K": 3, "capacity": 1.0},
    "policy": {"name": "pgsmw", "schedule": "delayed", "no_delay": False},
    "horizon": {"T": 4000},
    "noise": 0.0,
    "output": {"dir": None, "trajectory": False},
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return normalize_config(data)


def normalize_config(data):
    cfg = _merge(DEFAULT_CONFIG, data)
    if "scenario" in data:
        cfg["scenario"] = copy.deepcopy(data["scenario"])
    if isinstance(cfg["horizon"], (int, float)):
        cfg["horizon"] = {"T": int(cfg["horizon"])}
    unknown = set(cfg) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    if int(cfg["horizon"]["T"]) < 1:
        raise ConfigurationError("horizon must be at least one slot")
    return cfg


def config_hash(cfg):
    blob = json.dumps({k: cfg[k] for k in ("scenario", "policy", "horizon", "noise")},
                      sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


@lru_cache(maxsize=64)
def _cached_bundle(scenario_json, seed):
    bundle = build_scenario(json.loads(scenario_json), seed=seed)
    oracle = solve_opt(bundle.problem)
    return bundle, oracle


def scenario_bundle(scenario_cfg, seed, noise=0.0):
    """Build (and memoise) a scenario together with its static optimum."""
    seed = scenario_cfg.get("seed", seed)
    bundle, oracle = _cached_bundle(json.dumps(scenario_cfg, sort_keys=True), seed)
    if noise:
        bundle = copy.copy(bundle)
        bundle.utilities = bundle.utilities.with_noise(noise)
    return bundle, oracle


def resolve_params(policy_cfg, T, bundle, overrides=None):
    """Explicit ``alpha``/``V``/``delta`` win over the schedule."""
    overrides = overrides or {}
    K, B = bundle.network.n_classes, bundle.network.size_bound
    steps = max(1, math.ceil(T / 2))
    base = {}
    schedule = policy_cfg.get("schedule")
    if schedule:
        p = schedule_params(steps, K, bundle.problem.eta, B, schedule)
        base = {"alpha": p.alpha, "V": p.V, "delta": p.delta}
    for key in ("alpha", "V", "delta"):
        if policy_cfg.get(key) is not None:
            base[key] = float(policy_cfg[key])
        if overrides.get(key) is not None:
            base[key] = float(overrides[key])
    missing = {"alpha", "V", "delta"} - set(base)
    if missing:
        raise ConfigurationError(f"policy parameters {sorted(missing)} need a value or a schedule")
    return PolicyParams(V=base["V"], alpha=base["alpha"], delta=base["delta"], B=B, K=K,
                        eta=bundle.problem.eta)


@dataclass
class RunRecord:
    config_hash: str
    scenario: str
    seed: int
    T: int
    policy: str
    alpha: float
    V: float
    delta: float
    noise: float
    no_delay: bool
    opt: float
    utility: float
    regret_bound: float
    final_queue: float
    max_queue: float
    mean_queue: float
    steady_queue: float
    instances: int
    mean_inst_utility: float
    delivered: int
    wall_time: float

    def row(self):
        return asdict(self)


@dataclass
class Trajectory:
    total_queue: np.ndarray
    source_queue: np.ndarray
    delivered_count: np.ndarray
    delivered_utility: np.ndarray
    r_hat: np.ndarray = field(default=None, repr=False)

    def write_csv(self, path):
        K = self.source_queue.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "total_queue"] + [f"source_queue_{k}" for k in range(K)]
                       + ["delivered_count", "delivered_utility_cumulative"])
            for t in range(len(self.total_queue)):
                w.writerow([t + 1, repr(float(self.total_queue[t]))]
                           + [repr(float(x)) for x in self.source_queue[t]]
                           + [int(self.delivered_count[t]), repr(float(self.delivered_utility[t]))])


@dataclass
class RunResult:
    record: RunRecord
    trajectory: Trajectory | None
    ledger: list
    policy: object


def simulate(bundle, policy, T, seed, no_delay=False, opt=None, network=None,
             trajectory=True, check_every=0, config_hash="-", keep_ledger=True):
    """Run ``policy`` for ``T`` slots on ``bundle`` and measure it.

    ``network`` overrides the bundle's network (same classes and bound).
    Utility counts only jobs delivered by the horizon; observations fed back
    to the policy carry the bundle's noise.
    """
    net = network or bundle.network
    util = bundle.utilities
    K = net.n_classes
    if no_delay is False and getattr(policy, "needs_immediate_feedback", False):
        no_delay = True
    state_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    sim = Simulator(net)
    src = np.array([s for s, _ in net.classes])
    cls = np.arange(K)
    started = time.perf_counter()

    tq = np.zeros(T)
    sq = np.zeros((T, K)) if trajectory else None
    dc = np.zeros(T, dtype=np.int64)
    du = np.zeros(T)
    r_traj = []
    ledger = []
    U = 0.0
    inst_util = 0.0
    n_epochs = 0
    decision = None
    for t in range(T):
        if t % 2 == 0:
            decision = policy.step(sim.Q[src, cls], t)
            sizes, sign = decision.plus, 1
            inst_util += float(util.total(decision.r_hat))
            n_epochs += 1
            if trajectory:
                r_traj.append(decision.r_hat)
        else:
            sizes, sign = decision.minus, -1
        jobs = [sim.new_job(k, float(sizes[k]), sign, decision.instance_id) for k in range(K)]
        for job in jobs:
            policy.bind(job)
        state = net.draw_state(state_rng)
        action = net.max_weight(state, sim.Q)
        if no_delay:
            policy.collect([(job.id, util.observe(job.k, job.size, noise_rng)) for job in jobs])
        report = sim.apply_slot(state, action, jobs)
        feedback = []
        for job in report.delivered:
            value = util.evaluate(job.k, job.size)
            U += value
            if not no_delay:
                obs = value + noise_rng.uniform(-util.noise, util.noise) if util.noise > 0 else value
                feedback.append((job.id, obs))
                if keep_ledger:
                    ledger.append((job.id, t, obs))
            elif keep_ledger:
                ledger.append((job.id, t, value))
        if feedback:
            policy.collect(feedback)
        if check_every and (t + 1) % check_every == 0:
            sim.check()
        tq[t] = sim.total_queue()
        if trajectory:
            sq[t] = sim.Q[src, cls]
        dc[t] = sim.delivered_count
        du[t] = U

    opt = float(opt) if opt is not None else math.nan
    regret = T * opt - U
    p = policy.params
    half = T // 2
    record = RunRecord(
        config_hash=config_hash, scenario=bundle.tag, seed=int(seed), T=int(T), policy=policy.name,
        alpha=p.alpha, V=p.V, delta=p.delta, noise=util.noise, no_delay=bool(no_delay),
        opt=opt, utility=U, regret_bound=regret, final_queue=float(tq[-1]),
        max_queue=float(tq.max()), mean_queue=float(tq.mean()),
        steady_queue=float(tq[half:].mean()), instances=int(policy.n_instances),
        mean_inst_utility=inst_util / max(n_epochs, 1), delivered=int(sim.delivered_count),
        wall_time=time.perf_counter() - started)
    if not math.isnan(opt) and regret < -BENCHMARK_TOL * T:
        raise BenchmarkViolation(
            f"delivered utility {U:.6f} exceeds T*OPT = {T * opt:.6f} "
            f"(policy={policy.name}, seed={seed}, T={T}, scenario={bundle.tag})")
    traj = None
    if trajectory:
        traj = Trajectory(tq, sq, dc, du, np.array(r_traj))
    return RunResult(record, traj, ledger, policy)


def run_once(config, seed, overrides=None, trajectory=None, keep_ledger=False):
    """Build the configured scenario and policy and simulate one run."""
    cfg = normalize_config(config)
    T = int(cfg["horizon"]["T"])
    noise = float(cfg.get("noise") or 0.0)
    bundle, oracle = scenario_bundle(cfg["scenario"], seed, noise)
    params = resolve_params(cfg["policy"], T, bundle, overrides)
    policy = make_policy(cfg["policy"]["name"], params)
    want_traj = bool(cfg["output"].get("trajectory")) if trajectory is None else trajectory
    result = simulate(bundle, policy, T, seed, no_delay=bool(cfg["policy"].get("no_delay")),
                      opt=oracle.value, trajectory=want_traj, config_hash=config_hash(cfg),
                      keep_ledger=keep_ledger)
    return result


def write_records(path, records):
    records = list(records)
    if not records:
        return
    names = [f.name for f in fields(RunRecord)]
    extra = [k for k in records[0] if k not in names] if isinstance(records[0], dict) else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=extra + names)
        w.writeheader()
        for rec in records:
            w.writerow(rec if isinstance(rec, dict) else rec.row())


def write_run(result, out_dir, name="run"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / f"{name}_summary.csv", [result.record])
    if result.trajectory is not None:
        result.trajectory.write_csv(out / f"{name}_trajectory.csv")


AXES = {"alpha", "V", "delta", "noise", "T"}


def _apply_axis(cfg, axis, value):
    cfg = copy.deepcopy(cfg)
    overrides = {}
    if axis in ("alpha", "V", "delta"):
        overrides[axis] = float(value)
    elif axis == "noise":
        cfg["noise"] = float(value)
    elif axis == "T":
        cfg["horizon"]["T"] = int(value)
    elif "." in axis:
        section, key = axis.split(".", 1)
        if section not in ("scenario", "policy"):
            raise ConfigurationError(f"cannot sweep {axis!r}")
        cfg[section][key] = value
    else:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; use {sorted(AXES)} or section.key")
    return cfg, overrides


def _job(args):
    cfg, seed, overrides = args
    return run_once(cfg, seed, overrides, trajectory=False).record


def _map(jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_job, jobs))
    return [_job(j) for j in jobs]


@dataclass
class SweepResult:
    axis: str
    values: list
    records: list
    summary: list

    def column(self, name):
        return [row[name] for row in self.summary]


def sweep(config, axis, values, seeds, out_dir=None, workers=1):
    """One run per (value, seed); summary rows average over seeds."""
    cfg = normalize_config(config)
    jobs, tags = [], []
    for value in values:
        c, ov = _apply_axis(cfg, axis, value)
        for seed in seeds:
            jobs.append((c, seed, ov))
            tags.append(value)
    records = _map(jobs, workers)
    summary = []
    for value in values:
        recs = [r for r, v in zip(records, tags) if v == value]
        summary.append({
            axis: value,
            "runs": len(recs),
            "utility": float(np.mean([r.utility for r in recs])),
            "regret_bound": float(np.mean([r.regret_bound for r in recs])),
            "mean_queue": float(np.mean([r.mean_queue for r in recs])),
            "steady_queue": float(np.mean([r.steady_queue for r in recs])),
            "max_queue": float(np.mean([r.max_queue for r in recs])),
            "mean_inst_utility": float(np.mean([r.mean_inst_utility for r in recs])),
        })
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / f"sweep_{axis}.csv",
                      [{axis: v, **r.row()} for r, v in zip(records, tags)])
        with open(out / f"sweep_{axis}_summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(summary[0]))
            w.writeheader()
            w.writerows(summary)
    return SweepResult(axis, list(values), records, summary)


def loglog_slope(xs, ys):
    """Least-squares slope of log(y) on log(x)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


@dataclass
class ScalingResult:
    horizons: list
    records: list
    slopes: dict
    slope: float

    def ratio_spread(self):
        """Per seed: max/min of (max total queue)/sqrt(T) across horizons."""
        out = {}
        for seed in self.slopes:
            ratios = [r.max_queue / math.sqrt(r.T) for r in self.records if r.seed == seed]
            out[seed] = max(ratios) / min(ratios)
        return out


def regret_scaling(config, horizons, seeds, out_dir=None, workers=1):
    """Fit the log-log slope of ``T*OPT - U`` against ``T`` for each seed."""
    if len(horizons) < 3:
        raise ConfigurationError("regret scaling needs at least three horizons")
    cfg = normalize_config(config)
    jobs = []
    for seed in seeds:
        for T in horizons:
            c = copy.deepcopy(cfg)
            c["horizon"]["T"] = int(T)
            jobs.append((c, seed, None))
    records = _map(jobs, workers)
    slopes = {}
    for seed in seeds:
        pts = [(r.T, r.regret_bound) for r in records if r.seed == seed]
        good = [(T, g) for T, g in pts if g > 0]
        if len(good) < len(pts):
            log.warning("seed %s: %d nonpositive regret values excluded", seed, len(pts) - len(good))
        if len(good) >= 2:
            slopes[seed] = loglog_slope(*zip(*good))
    slope = float(np.mean(list(slopes.values()))) if slopes else math.nan
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "regret_scaling.csv", records)
        with open(out / "regret_scaling_slopes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "slope"])
            for seed, s in slopes.items():
                w.writerow([seed, s])
            w.writerow(["mean", slope])
    return ScalingResult(list(horizons), records, slopes, slope)


def oracle_report(config, seed=0):
    cfg = normalize_config(config)
    bundle, oracle = scenario_bundle(cfg["scenario"], seed)
    rec = oracle.as_dict()
    rec.update({"scenario": bundle.tag, "K": bundle.network.n_classes,
                "D": bundle.utilities.D, "L": bundle.utilities.L,
                "utilities": bundle.utilities.as_dicts(), "metadata": bundle.metadata})
    return rec
