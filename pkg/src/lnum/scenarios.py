"""Application bundles: database queries, bipartite job scheduling and
multi-hop video streaming, each as network + utilities + static problem."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import ConfigurationError, NonInteriorError
from .network import BipartiteNetwork, TabularNetwork
from .oracle import BipartiteRegion, FlowRegion, SharedLinkRegion, StaticProblem
from .utility import Utility, UtilitySpec, draw_utilities

CAPACITY_LEVELS = (0.6, 0.8, 1.0, 1.2, 1.4)


@dataclass
class Bundle:
    tag: str
    network: object
    utilities: UtilitySpec
    problem: StaticProblem
    metadata: dict = field(default_factory=dict)


def _utility_spec(utilities, K, bound, rng, noise):
    if utilities is None:
        return UtilitySpec(draw_utilities(K, rng, bound), bound, noise), "drawn"
    utilities = [u if isinstance(u, Utility) else Utility(**u) for u in utilities]
    if len(utilities) == 1 and K > 1:
        utilities = utilities * K
    if len(utilities) != K:
        raise ConfigurationError(f"{len(utilities)} utilities for {K} classes")
    return UtilitySpec(utilities, bound, noise), "given"


def build_database(K, capacity=1.0, utilities=None, seed=0, size_bound=2.0, noise=0.0):
    """K query classes share one database link of capacity ``capacity``.

    Each class keeps its own queue at the single source node; the action
    picks which class the link serves this slot, at full rate.
    """
    if not capacity > 0:
        raise ConfigurationError("database capacity must be positive")
    rng = np.random.default_rng(seed)
    util, origin = _utility_spec(utilities, K, size_bound, rng, noise)
    rates = np.zeros((1, K, 1, K))
    for k in range(K):
        rates[0, k, 0, k] = capacity
    net = TabularNetwork(2, [(0, 1)], [(0, 1)] * K, [1.0], rates, size_bound,
                         node_names=["clients", "database"],
                         action_labels=[f"serve {k}" for k in range(K)])
    problem = StaticProblem(util, SharedLinkRegion(K, capacity, size_bound))
    meta = {"scenario": "database", "K": K, "capacity": capacity, "size_bound": size_bound,
            "utilities": origin, "seed": seed}
    return Bundle("database", net, util, problem, meta)


def build_job_scheduling(K, M, expected_degree=6, levels=CAPACITY_LEVELS, level_probs=None,
                         utilities=None, seed=0, size_bound=3.0, noise=0.0, adjacency=None,
                         max_retries=20):
    """K dispatchers, M servers, random bipartite links.

    Each dispatcher-server pair is linked with probability
    ``expected_degree / M``; a dispatcher left without servers gets one chosen
    uniformly.  Server capacity levels are i.i.d. per server and slot.
    """
    if K < 1 or M < 1:
        raise ConfigurationError("need at least one dispatcher and one server")
    levels = np.asarray(levels, dtype=float)
    mean_cap = float(levels.mean() if level_probs is None else np.dot(levels, level_probs))
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt]) if attempt else np.random.default_rng(seed)
        if adjacency is None:
            p = min(1.0, expected_degree / M)
            adj = [[m for m in range(M) if rng.random() < p] for _ in range(K)]
            for row in adj:
                if not row:
                    row.append(int(rng.integers(M)))
        else:
            adj = [list(row) for row in adjacency]
        util, origin = _utility_spec(utilities, K, size_bound, rng, noise)
        net = BipartiteNetwork(adj, levels, level_probs, size_bound, n_servers=M)
        try:
            problem = StaticProblem(util, BipartiteRegion(adj, np.full(M, mean_cap), size_bound))
        except NonInteriorError:
            if adjacency is not None:
                raise
            continue
        meta = {"scenario": "job_scheduling", "K": K, "M": M, "expected_degree": expected_degree,
                "levels": levels.tolist(), "mean_capacity": mean_cap, "size_bound": size_bound,
                "utilities": origin, "seed": seed, "attempt": attempt,
                "generator_variant": "discretized-capacity"}
        return Bundle("job_scheduling", net, util, problem, meta)
    raise NonInteriorError("could not generate a job-scheduling instance with positive slack")


def _independent_sets(n_links, conflicts):
    bad = {frozenset(c) for c in conflicts}
    out = []
    for size in range(n_links + 1):
        for subset in itertools.combinations(range(n_links), size):
            if not any(frozenset(pair) in bad for pair in itertools.combinations(subset, 2)):
                out.append(subset)
    return out


def build_video_streaming(edges, pairs, states, probs=None, conflicts=(), routes=None,
                          utilities=None, seed=0, size_bound=2.0, noise=0.0, max_actions=20_000):
    """Video flows over a multi-hop network.

    Parameters
    ----------
    edges : sequence of (node, node)
        Directed links; node labels are arbitrary hashables.
    pairs : sequence of (server, user)
        One class per pair.
    states : sequence of dict or sequence of sequence
        Per-state link capacities (indexed like ``edges``).
    conflicts : sequence of (edge_index, edge_index)
        Links that cannot be active in the same slot.
    routes : sequence of node paths, optional
        Defaults to a shortest path per class.

    An action activates an interference-free subset of links and assigns
    each active link one of the classes routed over it.
    """
    labels = sorted({u for e in edges for u in e} | {u for p in pairs for u in p}, key=str)
    index = {u: i for i, u in enumerate(labels)}
    links = [(index[a], index[b]) for a, b in edges]
    link_of = {(a, b): l for l, (a, b) in enumerate(links)}
    g = nx.DiGraph()
    g.add_nodes_from(range(len(labels)))
    g.add_edges_from(links)
    if routes is None:
        try:
            routes = [nx.shortest_path(g, index[s], index[d]) for s, d in pairs]
        except nx.NetworkXNoPath as exc:
            raise ConfigurationError(str(exc)) from None
    else:
        routes = [[index[u] for u in path] for path in routes]
    K = len(pairs)
    on_route = [[] for _ in links]
    for k, path in enumerate(routes):
        if len(set(path)) != len(path):
            raise ConfigurationError(f"route of class {k} is cyclic")
        if path[0] != index[pairs[k][0]] or path[-1] != index[pairs[k][1]]:
            raise ConfigurationError(f"route of class {k} does not join its endpoints")
        for a, b in zip(path, path[1:]):
            if (a, b) not in link_of:
                raise ConfigurationError(f"route of class {k} uses missing link {(labels[a], labels[b])}")
            on_route[link_of[(a, b)]].append(k)

    caps = np.array([[st[l] for l in range(len(links))] if not isinstance(st, dict)
                     else [st.get(edges[l], st.get(l, 0.0)) for l in range(len(links))]
                     for st in states], dtype=float)
    S = len(caps)
    probs = np.full(S, 1.0 / S) if probs is None else np.asarray(probs, dtype=float)

    actions = []
    for active in _independent_sets(len(links), conflicts):
        usable = [l for l in active if on_route[l]]
        for assign in itertools.product(*[on_route[l] for l in usable]):
            actions.append(dict(zip(usable, assign)))
            if len(actions) > max_actions:
                raise ConfigurationError("action set too large to enumerate")
    # drop duplicates produced by links that carry no class
    uniq, seen = [], set()
    for a in actions:
        key = tuple(sorted(a.items()))
        if key not in seen:
            seen.add(key)
            uniq.append(a)
    actions = uniq
    rates = np.zeros((S, len(actions), len(links), K))
    for x, a in enumerate(actions):
        for l, k in a.items():
            rates[:, x, l, k] = caps[:, l]
    net = TabularNetwork(len(labels), links, [(index[s], index[d]) for s, d in pairs], probs,
                         rates, size_bound, node_names=labels,
                         action_labels=[tuple(sorted(a.items())) for a in actions])
    rng = np.random.default_rng(seed)
    util, origin = _utility_spec(utilities, K, size_bound, rng, noise)
    problem = StaticProblem(util, FlowRegion(net))
    meta = {"scenario": "video_streaming", "K": K, "n_links": len(links), "n_states": S,
            "n_actions": len(actions), "size_bound": size_bound, "utilities": origin, "seed": seed}
    return Bundle("video_streaming", net, util, problem, meta)


def build_scenario(cfg, seed=0, noise=0.0):
    """Dispatch on ``cfg['tag']``; remaining keys are builder arguments."""
    cfg = dict(cfg)
    tag = cfg.pop("tag", None)
    cfg.pop("noise", None)
    seed = cfg.pop("seed", seed)
    builders = {"database": build_database, "job_scheduling": build_job_scheduling,
                "video_streaming": build_video_streaming}
    if tag not in builders:
        raise ConfigurationError(f"unknown scenario {tag!r}; choose from {sorted(builders)}")
    try:
        return builders[tag](seed=seed, noise=noise, **cfg)
    except TypeError as exc:
        raise ConfigurationError(f"bad {tag} parameters: {exc}") from None
