"""Discrete-time queueing network engine.

Two network flavours share one interface:

* :class:`TabularNetwork` enumerates states and actions explicitly and stores
  the offered rates as a dense ``(state, action, link, class)`` table.
* :class:`BipartiteNetwork` is the dispatcher/server topology used for job
  scheduling, where the action space is a product over dispatchers and
  servers and cannot be enumerated.

:class:`Simulator` owns the per-(node, class) FIFO queues and advances them one
slot at a time with fluid FIFO transport.
"""
from __future__ import annotations

import bisect
import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DomainError

PROB_TOL = 1e-12


@dataclass(eq=False)
class Job:
    """A unit of admitted traffic.

    ``remaining`` is the volume not yet delivered to the destination; while
    a job is split across several queues it is the sum over its chunks.
    """

    id: int
    k: int
    size: float
    sign: int = 0
    instance_id: int = -1
    injected_at: int = 0
    remaining: float = 0.0
    delivered_at: int | None = None
    _chunks: int = field(default=0, repr=False)


@dataclass
class SlotReport:
    slot: int
    delivered: list
    realized: dict


def _class_paths_ok(n_nodes, links, carried, source, dest):
    """BFS over the links that may carry the class."""
    adj = [[] for _ in range(n_nodes)]
    for l in carried:
        i, j = links[l]
        adj[i].append(j)
    seen = {source}
    todo = [source]
    while todo:
        u = todo.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return dest in seen


def _is_acyclic(n_nodes, edges):
    indeg = [0] * n_nodes
    adj = [[] for _ in range(n_nodes)]
    for i, j in edges:
        adj[i].append(j)
        indeg[j] += 1
    ready = [v for v in range(n_nodes) if indeg[v] == 0]
    count = 0
    while ready:
        u = ready.pop()
        count += 1
        for v in adj[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return count == n_nodes


class Network:
    """Common interface of the network models.

    Subclasses set ``n_nodes``, ``links`` (list of ``(i, j)`` node indices),
    ``classes`` (list of ``(source, destination)``), ``rate_bound`` and
    ``size_bound``, and implement :meth:`draw_state`, :meth:`offered` and
    :meth:`max_weight`.
    """

    n_nodes: int
    links: list
    classes: list
    rate_bound: float
    size_bound: float
    node_names: list

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def sources(self):
        return [s for s, _ in self.classes]

    def draw_state(self, rng):
        raise NotImplementedError

    def offered(self, state, action):
        """Positive offered rates as a list of ``(link, class, rate)``."""
        raise NotImplementedError

    def max_weight(self, state, queues):
        raise NotImplementedError

    def link_weights(self, queues):
        """Backpressure differential ``Q_i^k - Q_j^k`` per (link, class)."""
        queues = np.asarray(queues, dtype=float)
        tails = np.fromiter((i for i, _ in self.links), int, len(self.links))
        heads = np.fromiter((j for _, j in self.links), int, len(self.links))
        return queues[tails] - queues[heads]


class TabularNetwork(Network):
    """Network with enumerated states and actions.

    Parameters
    ----------
    n_nodes : int
    links : sequence of (int, int)
    classes : sequence of (int, int)
        Source and destination node of each class.
    probs : sequence of float
        State distribution ``p(w)``.
    rates : array_like, shape (S, X, L, K)
        Offered rate of class ``k`` on link ``l`` under state ``s`` and
        action ``x``.
    size_bound : float
        Maximum job size ``B``.
    rate_bound : float, optional
        Bound ``A`` on every offered rate; defaults to the table maximum.
    """

    def __init__(self, n_nodes, links, classes, probs, rates, size_bound,
                 rate_bound=None, node_names=None, action_labels=None):
        self.n_nodes = int(n_nodes)
        self.links = [(int(i), int(j)) for i, j in links]
        self.classes = [(int(s), int(d)) for s, d in classes]
        self.probs = np.asarray(probs, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        self.size_bound = float(size_bound)
        self.rate_bound = float(self.rates.max(initial=0.0)) if rate_bound is None else float(rate_bound)
        self.node_names = list(node_names) if node_names is not None else list(range(self.n_nodes))
        self.action_labels = action_labels
        self._validate()

        S, X, L, K = self.rates.shape
        self.n_states, self.n_actions = S, X
        self._cum = np.cumsum(self.probs).tolist()
        self._cum[-1] = 1.0
        self._flat = self.rates.reshape(S, X, L * K)
        self._tails = np.array([i for i, _ in self.links], dtype=int)
        self._heads = np.array([j for _, j in self.links], dtype=int)
        self._sparse = [[[(l, k, float(self.rates[s, x, l, k]))
                          for l, k in zip(*np.nonzero(self.rates[s, x]))]
                         for x in range(X)] for s in range(S)]

    def _validate(self):
        if self.rates.ndim != 4:
            raise ConfigurationError("rates must have shape (states, actions, links, classes)")
        S, X, L, K = self.rates.shape
        if S == 0 or X == 0:
            raise ConfigurationError("empty state or action set")
        if L != len(self.links) or K != len(self.classes):
            raise ConfigurationError("rate table does not match links/classes")
        if self.probs.shape != (S,):
            raise ConfigurationError("one probability per state required")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError("state probabilities must be nonnegative and sum to 1")
        if self.size_bound <= 0:
            raise ConfigurationError("size bound must be positive")
        if np.any(self.rates < 0) or np.any(self.rates > self.rate_bound):
            raise ConfigurationError("offered rates must lie in [0, A]")
        for i, j in self.links:
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes) or i == j:
                raise ConfigurationError(f"bad link {(i, j)}")
        for k, (s, d) in enumerate(self.classes):
            carried = np.nonzero(self.rates[:, :, :, k].max(axis=(0, 1)) > 0)[0]
            if s == d or not _class_paths_ok(self.n_nodes, self.links, range(len(self.links)), s, d):
                raise ConfigurationError(f"class {k} has no path from {s} to {d}")
            if not _is_acyclic(self.n_nodes, [self.links[l] for l in carried]):
                raise ConfigurationError(f"class {k} routes are cyclic")

    def draw_state(self, rng):
        if self.n_states == 1:
            return 0
        return bisect.bisect_right(self._cum, rng.random())

    def offered(self, state, action):
        try:
            return self._sparse[state][action]
        except (IndexError, TypeError):
            raise ConfigurationError(f"unknown state/action {(state, action)}") from None

    def max_weight(self, state, queues):
        if not 0 <= state < self.n_states:
            raise ConfigurationError(f"unknown state {state}")
        queues = np.asarray(queues, dtype=float)
        diff = (queues[self._tails] - queues[self._heads]).ravel()
        # np.argmax returns the first maximiser: lowest action index on ties
        return int(np.argmax(self._flat[state] @ diff))

    def actions(self):
        return range(self.n_actions)

    def mean_rates(self):
        """Expected offered rate per action profile is not defined; this is
        the per-state table weighted by ``p(w)`` for a fixed action."""
        return np.tensordot(self.probs, self.rates, axes=1)


class BipartiteNetwork(Network):
    """Dispatchers feeding parallel servers that drain into one sink.

    Node layout: dispatchers ``0..K-1``, servers ``K..K+M-1``, sink ``K+M``.
    Each server's capacity level is drawn independently every slot.

    An action is ``(dispatch, serve)``: ``dispatch[k]`` is a link index out of
    dispatcher ``k`` or ``-1`` (hold), ``serve[m]`` is the class served by
    server ``m`` or ``-1`` (idle).
    """

    def __init__(self, adjacency, levels, level_probs=None, size_bound=3.0, dispatch_rate=None,
                 n_servers=None):
        self.adjacency = [sorted(set(int(m) for m in row)) for row in adjacency]
        K = len(self.adjacency)
        if K == 0:
            raise ConfigurationError("no dispatchers")
        self.levels = np.asarray(levels, dtype=float)
        if np.any(self.levels < 0):
            raise ConfigurationError("capacity levels must be nonnegative")
        n_levels = len(self.levels)
        if level_probs is None:
            level_probs = np.full(n_levels, 1.0 / n_levels)
        self.level_probs = np.asarray(level_probs, dtype=float)
        if np.any(self.level_probs < 0) or abs(self.level_probs.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError("level probabilities must be nonnegative and sum to 1")
        M = 1 + max((m for row in self.adjacency for m in row), default=-1)
        if n_servers is not None:
            if n_servers < M:
                raise ConfigurationError("adjacency refers to more servers than n_servers")
            M = int(n_servers)
        self.n_servers = M
        self.size_bound = float(size_bound)
        self.rate_bound = float(K * self.size_bound if dispatch_rate is None else dispatch_rate)
        if self.rate_bound < self.levels.max(initial=0.0):
            raise ConfigurationError("dispatch rate must dominate server capacities")
        for k, row in enumerate(self.adjacency):
            if not row:
                raise ConfigurationError(f"dispatcher {k} has no server")
        self.n_nodes = K + M + 1
        self.sink = K + M
        self.links = []
        self.dispatch_links = []
        for k, row in enumerate(self.adjacency):
            ids = []
            for m in row:
                ids.append(len(self.links))
                self.links.append((k, K + m))
            self.dispatch_links.append(ids)
        self.server_links = []
        for m in range(M):
            self.server_links.append(len(self.links))
            self.links.append((K + m, self.sink))
        self.classes = [(k, self.sink) for k in range(K)]
        self.served_classes = [[k for k in range(K) if m in self.adjacency[k]] for m in range(M)]
        self.node_names = [f"u{k}" for k in range(K)] + [f"s{m}" for m in range(M)] + ["sink"]
        self._cum = np.cumsum(self.level_probs)
        self._cum[-1] = 1.0
        self._uniform = np.allclose(self.level_probs, 1.0 / n_levels)

    def draw_state(self, rng):
        if len(self.levels) == 1:
            return np.zeros(self.n_servers, dtype=int)
        if self._uniform:
            return rng.integers(0, len(self.levels), size=self.n_servers)
        return np.searchsorted(self._cum, rng.random(self.n_servers), side="right")

    def capacities(self, state):
        return self.levels[state]

    def offered(self, state, action):
        dispatch, serve = action
        A = self.rate_bound
        out = []
        for k, l in enumerate(dispatch):
            if l >= 0:
                if l not in self.dispatch_links[k]:
                    raise ConfigurationError(f"dispatcher {k} has no link {l}")
                out.append((l, k, A))
        caps = self.levels[state]
        for m, k in enumerate(serve):
            if k >= 0:
                if k not in self.served_classes[m]:
                    raise ConfigurationError(f"server {m} does not serve class {k}")
                c = float(caps[m])
                if c > 0:
                    out.append((self.server_links[m], k, c))
        return out

    def max_weight(self, state, queues):
        # the weight separates per dispatcher and per server, so the product
        # argmax is the componentwise argmax (join-the-shortest-queue)
        q = queues.tolist() if isinstance(queues, np.ndarray) else queues
        K = len(self.adjacency)
        A = self.rate_bound
        dispatch = []
        for k, row in enumerate(self.adjacency):
            qk = q[k][k]
            best, choice = 0.0, -1
            for l, m in zip(self.dispatch_links[k], row):
                w = A * (qk - q[K + m][k])
                if w > best:
                    best, choice = w, l
            dispatch.append(choice)
        caps = self.levels[state].tolist()
        serve = []
        for m, ks in enumerate(self.served_classes):
            qm = q[K + m]
            best, choice = 0.0, -1
            for k in ks:
                w = caps[m] * qm[k]
                if w > best:
                    best, choice = w, k
            serve.append(choice)
        return tuple(dispatch), tuple(serve)

    def enumerate_actions(self):
        """All actions in lexicographic order (small instances only)."""
        d_opts = [[-1] + ids for ids in self.dispatch_links]
        s_opts = [[-1] + ks for ks in self.served_classes]
        for d in itertools.product(*d_opts):
            for s in itertools.product(*s_opts):
                yield d, s


class Simulator:
    """Per-(node, class) FIFO queues advanced one slot at a time.

    Within a slot, injections are enqueued at their sources first; then every
    link transmits from the queue contents present at that moment, and all
    transmitted volume lands downstream only after every link has been
    processed, so nothing is forwarded twice in one slot.
    """

    def __init__(self, network):
        self.network = network
        N, K = network.n_nodes, network.n_classes
        self.Q = np.zeros((N, K))
        self.queues = [[deque() for _ in range(K)] for _ in range(N)]
        self.slot = 0
        self.injected_volume = 0.0
        self.delivered_volume = 0.0
        self.delivered_count = 0
        self._next_id = 0
        self._dest = [d for _, d in network.classes]

    def new_job(self, k, size, sign=0, instance_id=-1):
        B = self.network.size_bound
        if not 0 <= k < self.network.n_classes:
            raise ConfigurationError(f"unknown class {k}")
        if not (0.0 <= size <= B):
            raise DomainError(f"job size {size} outside [0, {B}]")
        job = Job(self._next_id, k, float(size), sign, instance_id, self.slot, float(size))
        self._next_id += 1
        return job

    def apply_slot(self, state, action, injections=()):
        net = self.network
        Q = self.Q
        queues = self.queues
        links = net.links
        dest = self._dest
        sources = net.classes
        t = self.slot
        B = net.size_bound
        for job in injections:
            if not (0.0 <= job.size <= B):
                raise DomainError(f"job size {job.size} outside [0, {B}]")
            s = sources[job.k][0]
            job.injected_at = t
            job.remaining = job.size
            job._chunks = 1
            queues[s][job.k].append([job, job.size])
            Q[s, job.k] += job.size
            self.injected_volume += job.size

        pending = []
        realized = {}
        for l, k, rate in net.offered(state, action):
            i, j = links[l]
            dq = queues[i][k]
            budget = rate
            moved = 0.0
            while dq:
                chunk = dq[0]
                vol = chunk[1]
                if vol <= budget:
                    dq.popleft()
                    budget -= vol
                    moved += vol
                    pending.append((j, k, chunk[0], vol, False))
                else:
                    if budget > 0.0:
                        chunk[1] = vol - budget
                        moved += budget
                        pending.append((j, k, chunk[0], budget, True))
                    break
            if dq:
                Q[i, k] -= moved
                if Q[i, k] < 0.0:
                    Q[i, k] = 0.0
            else:
                Q[i, k] = 0.0
            realized[(l, k)] = realized.get((l, k), 0.0) + moved

        delivered = []
        for j, k, job, vol, split in pending:
            if split:
                job._chunks += 1
            if j == dest[k]:
                job._chunks -= 1
                self.delivered_volume += vol
                if job._chunks == 0:
                    job.remaining = 0.0
                    job.delivered_at = t
                    delivered.append(job)
                else:
                    job.remaining -= vol
                continue
            dq = queues[j][k]
            if dq and dq[-1][0] is job:
                dq[-1][1] += vol
                job._chunks -= 1
            else:
                dq.append([job, vol])
            Q[j, k] += vol
        self.delivered_count += len(delivered)
        self.slot = t + 1
        return SlotReport(t, delivered, realized)

    def total_queue(self):
        return float(self.Q.sum())

    def source_queues(self):
        Q = self.Q
        return np.array([Q[s, k] for k, (s, _) in enumerate(self.network.classes)])

    def queued_volume(self):
        """Recount queue contents from the chunks themselves."""
        return np.array([[sum(c[1] for c in dq) for dq in row] for row in self.queues])

    def check(self, tol=1e-9):
        """Raise :class:`ConsistencyError` if any engine invariant fails."""
        vol = self.queued_volume()
        if np.max(np.abs(vol - self.Q), initial=0.0) > tol:
            raise ConsistencyError("scalar queue lengths drifted from chunk volumes")
        for k, (_, d) in enumerate(self.network.classes):
            if self.Q[d, k] != 0.0 or self.queues[d][k]:
                raise ConsistencyError(f"destination queue of class {k} is not empty")
        balance = self.injected_volume - self.delivered_volume - float(vol.sum())
        if abs(balance) > max(1e-6, 1e-12 * self.injected_volume):
            raise ConsistencyError(f"volume not conserved (imbalance {balance:g})")


def draw_state(network, rng):
    return network.draw_state(rng)


def total_queue(sim):
    return sim.total_queue()
