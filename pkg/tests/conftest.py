import numpy as np
import pytest

from lnum.network import TabularNetwork
from lnum.utility import Utility, UtilitySpec

ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=str):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def single_link(rate, K=1, B=2.0, probs=(1.0,)):
    """Source 0 -> destination 1, one action serving every class at ``rate``."""
    rates = np.zeros((len(probs), 1, 1, K))
    rates[:, 0, 0, :] = rate
    return TabularNetwork(2, [(0, 1)], [(0, 1)] * K, probs, rates, B)


def tandem(rates, B=2.0):
    """Line 0 -> 1 -> ... -> n with one class and fixed per-link rates."""
    n = len(rates)
    table = np.zeros((1, 1, n, 1))
    table[0, 0, :, 0] = rates
    return TabularNetwork(n + 1, [(i, i + 1) for i in range(n)], [(0, n)], [1.0], table, B)


def random_dag_network(rng, n_nodes=6, K=3, n_states=3, n_actions=6, B=1.0, single_route=True):
    """Random DAG over a random node order.

    With ``single_route`` each class gets one random path and only its links
    carry it; otherwise every link between order positions inside the
    class's source-destination span may carry it.
    """
    perm = [int(v) for v in rng.permutation(n_nodes)]
    pairs = {(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)
             if j == i + 1 or rng.random() < 0.5}
    paths = []
    for _ in range(K):
        a, b = sorted(int(v) for v in rng.choice(n_nodes, 2, replace=False))
        mid = rng.choice(np.arange(a + 1, b), int(rng.integers(0, b - a)), replace=False)
        path = [a] + sorted(int(v) for v in mid) + [b]
        pairs.update(zip(path, path[1:]))
        paths.append(path)
    pairs = sorted(pairs)
    links = [(perm[i], perm[j]) for i, j in pairs]
    index = {p: l for l, p in enumerate(pairs)}
    carriers = []
    for path in paths:
        if single_route:
            carriers.append([index[p] for p in zip(path, path[1:])])
        else:
            a, b = path[0], path[-1]
            carriers.append([l for l, (i, j) in enumerate(pairs) if a <= i and j <= b])
    L = len(links)
    rates = np.zeros((n_states, n_actions, L, K))
    for k in range(K):
        for l in carriers[k]:
            mask = rng.random((n_states, n_actions)) < 0.7
            mask[rng.integers(n_states), rng.integers(n_actions)] = True
            rates[:, :, l, k] = mask * rng.uniform(0.0, 2.0, (n_states, n_actions))
    probs = rng.dirichlet(np.ones(n_states))
    classes = [(perm[p[0]], perm[p[-1]]) for p in paths]
    return TabularNetwork(n_nodes, links, classes, probs, rates, B)


@pytest.fixture
def sqrt_spec():
    return UtilitySpec([Utility("sqrt", 1.0, 0.0)], 2.0)


def fuzz_engine(net, slots, seed, load=0.3, check_every=500, fifo=True):
    """Drive ``net`` with random injections and actions, asserting the engine
    invariants every slot.  Returns the delivery ledger."""
    from lnum.network import Simulator

    rng = np.random.default_rng(seed)
    sim = Simulator(net)
    K, B = net.n_classes, net.size_bound
    dest = [d for _, d in net.classes]
    src = [s for s, _ in net.classes]
    injected = delivered = 0.0
    last_delivered = [-1] * K
    ledger = []
    for t in range(slots):
        jobs = []
        for k in range(K):
            if rng.random() < 0.8:
                jobs.append(sim.new_job(k, float(rng.uniform(0.0, 2 * load * B))))
        state = net.draw_state(rng)
        action = int(rng.integers(net.n_actions)) if rng.random() < 0.5 else net.max_weight(state, sim.Q)
        avail = sim.Q.copy()
        for job in jobs:
            avail[src[job.k], job.k] += job.size
            injected += job.size
        offered = {}
        for l, k, rate in net.offered(state, action):
            i = net.links[l][0]
            offered[(i, k)] = offered.get((i, k), 0.0) + rate
        report = sim.apply_slot(state, action, jobs)
        out = {}
        for (l, k), moved in report.realized.items():
            i, j = net.links[l]
            out[(i, k)] = out.get((i, k), 0.0) + moved
            if j == dest[k]:
                delivered += moved
        # work conservation: a queue sends min(content, total offered)
        for key, rate in offered.items():
            want = min(avail[key], rate)
            assert abs(out.get(key, 0.0) - want) <= 1e-9 * max(1.0, want), (t, key)
        for k in range(K):
            assert sim.Q[dest[k], k] == 0.0
        assert np.all(sim.Q >= 0.0)
        assert abs(injected - delivered - sim.Q.sum()) <= 1e-6
        for job in report.delivered:
            assert job.delivered_at == t and job.remaining == 0.0
            if fifo:
                assert job.id > last_delivered[job.k], "FIFO order violated"
                last_delivered[job.k] = job.id
            ledger.append((job.id, t))
        if check_every and (t + 1) % check_every == 0:
            sim.check()
    sim.check()
    return ledger
