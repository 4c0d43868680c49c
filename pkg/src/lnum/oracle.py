"""Static utility-maximisation benchmark over the network capacity region.

The region is handled through three primitives:

* ``lmo(c)``      a maximiser of ``<c, r>`` over the region (intersected with
                  the box ``[0, B]^K``);
* ``contains(r)`` LP feasibility plus the certificate found;
* ``vertices()``  an explicit finite generating set of the downward-closed
                  region, when one is cheap to enumerate.

:func:`solve_opt` runs away-step Frank-Wolfe on top of ``lmo``;
:func:`brute_force_opt` scans a grid against the explicit hull and never
calls ``lmo``.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from .errors import ConvergenceError, NonInteriorError, ResourceError

log = logging.getLogger(__name__)

SLACK_TOL = 1e-6
MEMBER_TOL = 1e-9


def _lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    return res


def _downward_points(points, K):
    """Every point with every subset of coordinates zeroed."""
    pts = [np.asarray(p, dtype=float) for p in points]
    out = []
    for mask in itertools.product((0.0, 1.0), repeat=K):
        m = np.array(mask)
        out.extend(p * m for p in pts)
    return np.unique(np.round(np.array(out), 12), axis=0)


class CapacityRegion:
    K: int
    B: float

    def lmo(self, c):
        raise NotImplementedError

    def contains(self, r):
        raise NotImplementedError

    def vertices(self):
        return None

    def coordinate_max(self):
        return np.array([self.lmo(np.eye(self.K)[k])[k] for k in range(self.K)])


class SharedLinkRegion(CapacityRegion):
    """All classes share one link of mean capacity ``capacity``."""

    def __init__(self, K, capacity, B):
        self.K, self.capacity, self.B = int(K), float(capacity), float(B)

    def lmo(self, c):
        # water-filling: best classes first, each up to B
        c = np.asarray(c, dtype=float)
        r = np.zeros(self.K)
        left = self.capacity
        for k in np.argsort(-c, kind="stable"):
            if c[k] <= 0 or left <= 0:
                break
            r[k] = min(self.B, left)
            left -= r[k]
        return r

    def contains(self, r):
        r = np.asarray(r, dtype=float)
        ok = bool(np.all(r >= -MEMBER_TOL) and np.all(r <= self.B + MEMBER_TOL)
                  and r.sum() <= self.capacity + MEMBER_TOL)
        return ok, {"load": float(r.sum()) / self.capacity if self.capacity > 0 else math.inf}

    def vertices(self, max_k=7):
        # fill classes in every order, each prefix stopping early
        if self.K > max_k:
            return None
        pts = []
        for perm in itertools.permutations(range(self.K)):
            for j in range(self.K + 1):
                r, left = np.zeros(self.K), self.capacity
                for k in perm[:j]:
                    r[k] = min(self.B, max(left, 0.0))
                    left -= r[k]
                pts.append(r)
        return _downward_points(pts, self.K)


class FlowRegion(CapacityRegion):
    """Capacity region of a :class:`~lnum.network.TabularNetwork`.

    Variables: per-state convex weights over actions, per (link, class)
    realised flows bounded by the expected offered rate, and the class
    rates.  Flow into any relay node of a class must not exceed flow out of
    it, and a class rate is bounded by the flow leaving its source.
    """

    def __init__(self, network):
        self.network = network
        self.K = network.n_classes
        self.B = network.size_bound
        S, X, L, K = network.rates.shape
        self.S, self.X, self.L = S, X, L
        carried = network.rates.max(axis=(0, 1)) > 0
        self.pairs = [(l, k) for l in range(L) for k in range(K) if carried[l, k]]
        nth, nphi = S * X, len(self.pairs)
        self.n_theta, self.n_phi = nth, nphi
        nvar = nth + nphi + K
        self.nvar = nvar
        r0 = nth + nphi

        rows, rhs = [], []
        # realised flow <= expected offered rate
        for idx, (l, k) in enumerate(self.pairs):
            row = np.zeros(nvar)
            row[nth + idx] = 1.0
            row[:nth] = -(network.probs[:, None] * network.rates[:, :, l, k]).ravel()
            rows.append(row)
            rhs.append(0.0)
        for k, (s, d) in enumerate(network.classes):
            # class rate <= flow out of the source
            row = np.zeros(nvar)
            row[r0 + k] = 1.0
            for idx, (l, kk) in enumerate(self.pairs):
                if kk == k and network.links[l][0] == s:
                    row[nth + idx] -= 1.0
            rows.append(row)
            rhs.append(0.0)
            # inflow <= outflow at relays
            for i in range(network.n_nodes):
                if i in (s, d):
                    continue
                row = np.zeros(nvar)
                touched = False
                for idx, (l, kk) in enumerate(self.pairs):
                    if kk != k:
                        continue
                    a, b = network.links[l]
                    if b == i:
                        row[nth + idx] += 1.0
                        touched = True
                    elif a == i:
                        row[nth + idx] -= 1.0
                        touched = True
                if touched:
                    rows.append(row)
                    rhs.append(0.0)
        self.A_ub = np.array(rows)
        self.b_ub = np.array(rhs)
        A_eq = np.zeros((S, nvar))
        for s in range(S):
            A_eq[s, s * X:(s + 1) * X] = 1.0
        self.A_eq = A_eq
        self.b_eq = np.ones(S)
        self._r0 = r0

    def _bounds(self, r=None):
        b = [(0, None)] * (self.n_theta + self.n_phi)
        if r is None:
            b += [(0, self.B)] * self.K
        else:
            b += [(float(x), float(x)) for x in r]
        return b

    def lmo(self, c):
        obj = np.zeros(self.nvar)
        obj[self._r0:] = -np.asarray(c, dtype=float)
        res = _lp(obj, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self._bounds())
        if res.status != 0:
            raise ConvergenceError(f"linear oracle failed: {res.message}")
        return np.clip(res.x[self._r0:], 0.0, self.B)

    def contains(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < -MEMBER_TOL) or np.any(r > self.B + MEMBER_TOL):
            return False, None
        r = np.clip(r, 0.0, self.B)
        res = _lp(np.zeros(self.nvar), self.A_ub, self.b_ub, self.A_eq, self.b_eq, self._bounds(r))
        if res.status != 0:
            return False, None
        return True, res.x[:self.n_theta].reshape(self.S, self.X)

    def is_single_hop(self):
        net = self.network
        return all(net.links[l][0] == net.classes[k][0] and net.links[l][1] == net.classes[k][1]
                   for l, k in self.pairs)

    def vertices(self, max_combos=200_000):
        """Minkowski sum of the per-state rate polytopes (single-hop only)."""
        if not self.is_single_hop():
            return None
        net = self.network
        per_state = []
        for s in range(self.S):
            vecs = net.rates[s].sum(axis=1)  # (X, K): every carried link is s_k -> d_k
            per_state.append(np.unique(net.probs[s] * vecs, axis=0))
        if math.prod(len(v) for v in per_state) > max_combos:
            return None
        pts = [sum(combo) for combo in itertools.product(*per_state)]
        return _downward_points(pts, self.K)


class BipartiteRegion(CapacityRegion):
    """Classes routed to linked servers of given mean capacity.

    The region is a polymatroid; ``rank(S)`` is the max flow from the
    classes in ``S`` (each capped at ``B``) to the servers.
    """

    def __init__(self, adjacency, capacities, B):
        self.adjacency = [sorted(set(row)) for row in adjacency]
        self.capacities = np.asarray(capacities, dtype=float)
        self.K = len(self.adjacency)
        self.B = float(B)
        self.edges = [(k, m) for k, row in enumerate(self.adjacency) for m in row]
        E, M, K = len(self.edges), len(self.capacities), self.K
        nvar = E + K
        rows, rhs = [], []
        for k in range(K):
            row = np.zeros(nvar)
            row[E + k] = 1.0
            for e, (kk, m) in enumerate(self.edges):
                if kk == k:
                    row[e] = -1.0
            rows.append(row)
            rhs.append(0.0)
        for m in range(M):
            row = np.zeros(nvar)
            for e, (k, mm) in enumerate(self.edges):
                if mm == m:
                    row[e] = 1.0
            rows.append(row)
            rhs.append(self.capacities[m])
        self.A_ub, self.b_ub, self.nvar, self.E = np.array(rows), np.array(rhs), nvar, E

    def _bounds(self, r=None):
        b = [(0, None)] * self.E
        b += [(0, self.B)] * self.K if r is None else [(float(x), float(x)) for x in r]
        return b

    def lmo(self, c):
        obj = np.zeros(self.nvar)
        obj[self.E:] = -np.asarray(c, dtype=float)
        res = _lp(obj, self.A_ub, self.b_ub, bounds=self._bounds())
        if res.status != 0:
            raise ConvergenceError(f"linear oracle failed: {res.message}")
        return np.clip(res.x[self.E:], 0.0, self.B)

    def contains(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < -MEMBER_TOL) or np.any(r > self.B + MEMBER_TOL):
            return False, None
        res = _lp(np.zeros(self.nvar), self.A_ub, self.b_ub, bounds=self._bounds(np.clip(r, 0, self.B)))
        if res.status != 0:
            return False, None
        return True, dict(zip(self.edges, res.x[:self.E]))

    def rank(self, classes):
        g = nx.DiGraph()
        for k in classes:
            g.add_edge("src", ("u", k), capacity=self.B)
            for m in self.adjacency[k]:
                g.add_edge(("u", k), ("s", m), capacity=math.inf)
        for m, c in enumerate(self.capacities):
            g.add_edge(("s", m), "sink", capacity=float(c))
        if not classes:
            return 0.0
        return float(nx.maximum_flow_value(g, "src", "sink"))

    def greedy(self, order):
        """Polymatroid greedy vertex for a class ordering."""
        r = np.zeros(self.K)
        prev = 0.0
        prefix = []
        for k in order:
            prefix.append(k)
            cur = self.rank(prefix)
            r[k] = cur - prev
            prev = cur
        return r

    def lmo_greedy(self, c):
        c = np.asarray(c, dtype=float)
        order = [k for k in np.argsort(-c, kind="stable") if c[k] > 0]
        return self.greedy(order)

    def vertices(self, max_k=6):
        if self.K > max_k:
            return None
        pts = set()
        for perm in itertools.permutations(range(self.K)):
            for j in range(self.K + 1):
                pts.add(tuple(np.round(self.greedy(perm[:j]), 12)))
        return _downward_points([np.array(p) for p in pts], self.K)


@dataclass
class OracleResult:
    r: np.ndarray
    value: float
    gap: float
    iterations: int
    eta: float
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {"opt": self.value, "r_star": [float(x) for x in self.r], "eta": self.eta,
                "fw_gap": self.gap, "iterations": self.iterations}


class StaticProblem:
    """Utilities plus capacity region; the Slater slack is computed eagerly
    and must be positive."""

    def __init__(self, utilities, region):
        self.utilities = utilities
        self.region = region
        self.K = region.K
        self.B = region.B
        self.eta = slater_slack(self)

    def objective(self, r):
        return float(self.utilities.total(r))


def capacity_member(problem, r):
    region = problem.region if isinstance(problem, StaticProblem) else problem
    return region.contains(r)


def slater_slack(problem, tol=SLACK_TOL):
    """Largest uniform rate inside the region, by bisection on membership."""
    region = problem.region if isinstance(problem, StaticProblem) else problem
    K = region.K
    hi = float(min(region.B, region.coordinate_max().min()))
    if hi <= tol:
        raise NonInteriorError(f"capacity region has empty interior (eta <= {tol})")
    if region.contains(np.full(K, hi))[0]:
        return hi
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if region.contains(np.full(K, mid))[0]:
            lo = mid
        else:
            hi = mid
    if lo <= tol:
        raise NonInteriorError(f"capacity region has empty interior (eta <= {tol})")
    return lo


def _line_search(grad, x, d, gmax, iters=100):
    """Maximise a concave function along ``x + g*d`` for ``g`` in [0, gmax]."""
    if grad(x + gmax * d) @ d >= 0:
        return gmax
    lo, hi = 0.0, gmax
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if grad(x + mid * d) @ d > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, gmax):
            break
    return lo


def solve_opt(problem, tol=1e-6, max_iter=100_000, lmo=None):
    """Away-step Frank-Wolfe with exact line search.

    Stops when the Frank-Wolfe gap ``<grad, s - x>`` is at most ``tol``;
    raises :class:`ConvergenceError` (carrying the last gap) otherwise.
    """
    lmo = lmo or problem.region.lmo
    util = problem.utilities
    K, B = problem.K, problem.B

    def grad(r):
        return util.gradient(np.clip(r, 0.0, B))

    def value(r):
        return float(util.total(np.clip(r, 0.0, B)))

    v0 = lmo(np.ones(K))
    verts = [v0]
    weights = [1.0]
    x = v0.copy()
    history = [value(x)]
    gap = math.inf
    for it in range(1, max_iter + 1):
        g = grad(x)
        s = lmo(g)
        gap = float(g @ (s - x))
        if gap <= tol:
            return OracleResult(x, value(x), max(gap, 0.0), it, problem.eta, history)
        V = np.array(verts)
        dots = V @ g
        a = int(np.argmin(dots))
        away_gap = float(g @ x - dots[a])
        if gap >= away_gap or len(verts) == 1:
            d = s - x
            gmax = 1.0
            step = _line_search(grad, x, d, gmax)
            weights = [w * (1.0 - step) for w in weights]
            for idx, v in enumerate(verts):
                if np.allclose(v, s, atol=1e-12, rtol=0):
                    weights[idx] += step
                    break
            else:
                verts.append(s)
                weights.append(step)
        else:
            wa = weights[a]
            d = x - verts[a]
            gmax = wa / (1.0 - wa)
            step = _line_search(grad, x, d, gmax)
            weights = [w * (1.0 + step) for w in weights]
            weights[a] -= step
        keep = [i for i, w in enumerate(weights) if w > 1e-14]
        verts = [verts[i] for i in keep]
        weights = [weights[i] for i in keep]
        total = sum(weights)
        weights = [w / total for w in weights]
        x = np.sum([w * v for w, v in zip(weights, verts)], axis=0)
        history.append(value(x))
    raise ConvergenceError(f"Frank-Wolfe stopped at gap {gap:.3g} after {max_iter} iterations",
                           gap=gap, iterations=max_iter)


def _hull_inequalities(points, K):
    if K == 1:
        top = float(points.max())
        return np.array([[1.0], [-1.0]]), np.array([top, 0.0])
    hull = ConvexHull(points)
    return hull.equations[:, :K], -hull.equations[:, K]


def brute_force_opt(problem, grid_step, max_points=5_000_000, max_lp_points=20_000):
    """Best grid point of ``[0, B]^K`` inside the region.

    Membership uses the convex hull of ``region.vertices()`` when available
    and one LP per grid point otherwise.
    """
    K, B = problem.K, problem.B
    region = problem.region
    # coordinates beyond the per-class maximum are infeasible anyway
    top = np.minimum(B, region.coordinate_max()) + 1e-12
    axes = [np.arange(0.0, t, grid_step) for t in top]
    n = math.prod(len(a) for a in axes)
    pts = region.vertices()
    if pts is None and n > max_lp_points:
        raise ResourceError(f"{n} grid points need one LP each (limit {max_lp_points})")
    if n > max_points:
        raise ResourceError(f"{n} grid points exceed the limit {max_points}")

    best_val, best_r = -math.inf, None
    if pts is not None:
        A, b = _hull_inequalities(pts, K)
        tol = 1e-9 * max(1.0, B)
        # slice on the first coordinate to bound memory
        rest = np.array(list(itertools.product(*axes[1:]))) if K > 1 else np.zeros((1, 0))
        for x0 in axes[0]:
            cand = np.column_stack([np.full(len(rest), x0), rest])
            ok = np.all(cand @ A.T <= b + tol, axis=1)
            if not ok.any():
                continue
            feas = cand[ok]
            vals = problem.utilities.total(feas)
            i = int(np.argmax(vals))
            if vals[i] > best_val:
                best_val, best_r = float(vals[i]), feas[i]
    else:
        for cand in itertools.product(*axes):
            cand = np.array(cand)
            v = float(problem.utilities.total(cand))
            if v > best_val and region.contains(cand)[0]:
                best_val, best_r = v, cand
    return best_r, best_val
