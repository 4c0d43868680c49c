"""Job-size policies driven by two-point utility samples and queue lengths.

Every policy exposes the same small protocol used by the harness:

``step(q_src)``
    Called once per decision epoch with the source queue lengths; returns a
    :class:`Decision` carrying the ``+delta`` and ``-delta`` job sizes.
``bind(job)``
    Registers an injected job (with its engine-assigned id).
``collect(feedback)``
    Consumes ``(job_id, observed_utility)`` pairs.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DomainError

FRESH = "FRESH"
STALE = "STALE"

SCHEDULES = ("delayed", "empirical", "no_delay")


@dataclass(frozen=True)
class PolicyParams:
    V: float
    alpha: float
    delta: float
    B: float
    K: int
    eta: float | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if 2 * self.delta > self.B:
            raise DomainError(f"2*delta={2 * self.delta} exceeds the size bound {self.B}")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not self.V > 0:
            raise DomainError("V must be positive")
        if self.K < 1:
            raise DomainError("K must be at least 1")


def schedule_params(T, K, eta=None, B=1.0, schedule="delayed"):
    """Parameters as a function of the number of decision epochs ``T``.

    ``delayed``   alpha = 2K sqrt(T)/eta, V = T**0.25, delta = 1/sqrt(T)
    ``empirical`` alpha = 50 sqrt(T),     V = T**0.25, delta = 1/sqrt(T)
    ``no_delay``  alpha = T,              V = sqrt(T), delta = 1/sqrt(T)
    (the last one has unit constants and is not calibrated)
    """
    if T < 1:
        raise DomainError("T must be at least 1")
    root = math.sqrt(T)
    if schedule == "delayed":
        if eta is None or not eta > 0:
            raise DomainError("the delayed schedule needs a positive Slater slack")
        alpha, V = 2 * K * root / eta, T ** 0.25
    elif schedule == "empirical":
        alpha, V = 50.0 * root, T ** 0.25
    elif schedule == "no_delay":
        alpha, V = float(T), root
    else:
        raise ConfigurationError(f"unknown schedule {schedule!r}")
    return PolicyParams(V=V, alpha=alpha, delta=1.0 / root, B=B, K=K, eta=eta)


def max_weight_action(network, state, queues):
    return network.max_weight(state, queues)


def gradient_estimate(obs_plus, obs_minus, delta):
    """Two-point central difference ``(f(r+d) - f(r-d)) / (2d)``."""
    return (obs_plus - obs_minus) / (2.0 * delta)


def gsmw_update(r_hat, grad, q_src, params):
    """Projected drift-plus-penalty step on the virtual job size."""
    step = np.asarray(r_hat, dtype=float) + (params.V * np.asarray(grad, dtype=float)
                                             - np.asarray(q_src, dtype=float)) / params.alpha
    lo, hi = params.delta, params.B - params.delta
    out = np.minimum(np.maximum(step, lo), hi)
    return out if out.ndim else float(out)


@dataclass
class Decision:
    instance_id: int
    r_hat: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


@dataclass
class InstanceRecord:
    id: int
    r_hat: np.ndarray
    created_at: int
    status: str = STALE
    outstanding: set = field(default_factory=set)
    obs_plus: np.ndarray | None = None
    obs_minus: np.ndarray | None = None
    grads: np.ndarray | None = None
    invocations: int = 0


class Policy:
    name = "policy"
    needs_immediate_feedback = False

    def __init__(self, params):
        self.params = params
        self.K = params.K
        self.steps = 0

    def _decision(self, iid, r):
        d = self.params.delta
        return Decision(iid, r, r + d, r - d)

    @property
    def n_instances(self):
        return 1


class GSMW(Policy):
    """Single learner; each update needs the previous epoch's samples.

    The queue term of an update is the source backlog seen at the start of
    the epoch whose samples produced the gradient.
    """

    name = "gsmw"
    needs_immediate_feedback = True

    def __init__(self, params):
        super().__init__(params)
        self.r_hat = np.full(self.K, params.delta)
        self._q_prev = None
        self._owner = {}
        self._plus = np.full(self.K, np.nan)
        self._minus = np.full(self.K, np.nan)
        self.trajectory = []

    def step(self, q_src, slot=None):
        if self._q_prev is not None:
            if np.isnan(self._plus).any() or np.isnan(self._minus).any():
                raise ConsistencyError("GSMW update without complete feedback; run it in no-delay mode")
            grads = gradient_estimate(self._plus, self._minus, self.params.delta)
            self.r_hat = gsmw_update(self.r_hat, grads, self._q_prev, self.params)
        self._q_prev = np.array(q_src, dtype=float)
        self._plus[:] = np.nan
        self._minus[:] = np.nan
        self.steps += 1
        self.trajectory.append(self.r_hat.copy())
        return self._decision(1, self.r_hat.copy())

    def bind(self, job):
        self._owner[job.id] = (job.k, job.sign)

    def collect(self, feedback):
        for job_id, value in feedback:
            try:
                k, sign = self._owner.pop(job_id)
            except KeyError:
                raise ConsistencyError(f"feedback for unknown job {job_id}") from None
            (self._plus if sign > 0 else self._minus)[k] = value


class PGSMW(Policy):
    """Reservoir of independent learners, each run as if feedback were
    immediate: a learner is only advanced once every sample it issued has
    come back.  Fresh learners are taken lowest id first."""

    name = "pgsmw"

    def __init__(self, params):
        super().__init__(params)
        self.instances = []
        self._fresh = []
        self._owner = {}
        self.invoked = []
        self.r_hat = np.full(self.K, params.delta)

    @property
    def n_instances(self):
        return len(self.instances)

    def step(self, q_src, slot=None):
        p = self.params
        if self._fresh:
            inst = self.instances[heapq.heappop(self._fresh)]
            if inst.status != FRESH:
                raise ConsistencyError(f"instance {inst.id} invoked while {inst.status}")
            inst.r_hat = gsmw_update(inst.r_hat, inst.grads, q_src, p)
        else:
            inst = InstanceRecord(len(self.instances), np.full(self.K, p.delta), self.steps)
            self.instances.append(inst)
        inst.status = STALE
        inst.invocations += 1
        inst.outstanding = set()
        inst.obs_plus = np.full(self.K, np.nan)
        inst.obs_minus = np.full(self.K, np.nan)
        inst.grads = None
        self.steps += 1
        self.invoked.append(inst.id)
        self.r_hat = inst.r_hat
        return self._decision(inst.id, inst.r_hat.copy())

    def bind(self, job):
        inst = self.instances[job.instance_id]
        inst.outstanding.add(job.id)
        self._owner[job.id] = (inst, job.k, job.sign)

    def collect(self, feedback):
        for job_id, value in feedback:
            try:
                inst, k, sign = self._owner.pop(job_id)
            except KeyError:
                raise ConsistencyError(f"feedback for unknown job {job_id}") from None
            inst.outstanding.discard(job_id)
            (inst.obs_plus if sign > 0 else inst.obs_minus)[k] = value
            if (inst.status == STALE and not inst.outstanding
                    and not np.isnan(inst.obs_plus).any() and not np.isnan(inst.obs_minus).any()):
                inst.grads = gradient_estimate(inst.obs_plus, inst.obs_minus, self.params.delta)
                inst.status = FRESH
                heapq.heappush(self._fresh, inst.id)

    def stale_count(self):
        return sum(1 for inst in self.instances if inst.status == STALE)


class EpisodicGSMW(Policy):
    """Keeps one job-size vector frozen until the samples of its last update
    have all returned; samples issued in between are discarded."""

    name = "episodic"

    def __init__(self, params):
        super().__init__(params)
        self.r_hat = np.full(self.K, params.delta)
        self._tracked = {}
        self._plus = np.full(self.K, np.nan)
        self._minus = np.full(self.K, np.nan)
        self._waiting = False
        self._untracked = set()
        self.episodes = 0

    def step(self, q_src, slot=None):
        if self.steps > 0 and not self._waiting:
            grads = gradient_estimate(self._plus, self._minus, self.params.delta)
            self.r_hat = gsmw_update(self.r_hat, grads, q_src, self.params)
        self.steps += 1
        if self._waiting:
            return self._decision(-1, self.r_hat.copy())
        self._waiting = True
        self.episodes += 1
        self._plus[:] = np.nan
        self._minus[:] = np.nan
        return self._decision(self.episodes, self.r_hat.copy())

    def bind(self, job):
        if job.instance_id < 0:
            self._untracked.add(job.id)
        else:
            self._tracked[job.id] = (job.k, job.sign)

    def collect(self, feedback):
        for job_id, value in feedback:
            if job_id in self._untracked:
                self._untracked.discard(job_id)
                continue
            try:
                k, sign = self._tracked.pop(job_id)
            except KeyError:
                raise ConsistencyError(f"feedback for unknown job {job_id}") from None
            (self._plus if sign > 0 else self._minus)[k] = value
            if not self._tracked and not np.isnan(self._plus).any() and not np.isnan(self._minus).any():
                self._waiting = False


class StaleGradientGSMW(Policy):
    """Updates every epoch with the newest completed gradient per class
    (zero until the first pair of samples returns)."""

    name = "stale_gradient"

    def __init__(self, params):
        super().__init__(params)
        self.r_hat = np.full(self.K, params.delta)
        self.grads = np.zeros(self.K)
        self._grad_epoch = np.full(self.K, -1)
        self._owner = {}
        self._pairs = {}

    def step(self, q_src, slot=None):
        if self.steps > 0:
            self.r_hat = gsmw_update(self.r_hat, self.grads, q_src, self.params)
        epoch = self.steps
        self.steps += 1
        self._pairs[epoch] = [np.full(self.K, np.nan), np.full(self.K, np.nan)]
        return self._decision(epoch, self.r_hat.copy())

    def bind(self, job):
        self._owner[job.id] = (job.instance_id, job.k, job.sign)

    def collect(self, feedback):
        for job_id, value in feedback:
            try:
                epoch, k, sign = self._owner.pop(job_id)
            except KeyError:
                raise ConsistencyError(f"feedback for unknown job {job_id}") from None
            pair = self._pairs[epoch]
            pair[0 if sign > 0 else 1][k] = value
            plus, minus = pair[0][k], pair[1][k]
            if not (math.isnan(plus) or math.isnan(minus)) and epoch >= self._grad_epoch[k]:
                self.grads[k] = gradient_estimate(plus, minus, self.params.delta)
                self._grad_epoch[k] = epoch
            if not (np.isnan(pair[0]).any() or np.isnan(pair[1]).any()):
                del self._pairs[epoch]


POLICIES = {cls.name: cls for cls in (GSMW, PGSMW, EpisodicGSMW, StaleGradientGSMW)}


def make_policy(name, params):
    try:
        return POLICIES[name](params)
    except KeyError:
        raise ConfigurationError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None


# functional aliases for the reservoir operations
def pgsmw_step(policy, q_src, slot=None):
    return policy.step(q_src, slot)


def collect_feedback(policy, delivered):
    policy.collect(delivered)
    return policy
