"""Seeded random instance generators for the four synthetic families.

chains: Gaussian-process unary tables plus torus-distance couplings on
consecutive pairs. permuted_chains: a chain in a hidden random variable order,
built from Dirichlet conditional tables, so the sequential methods see
"delayed" factors. fg1: random connected graphs with dense N(0,1) tables on
maximal cliques. fg2: binary variables paired by XOR factors, with scaled
MAJORITY factors on cliques of a pair-level random graph.

Every generator is a pure function of (parameters, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Factor, FactorGraph


class GenerationError(RuntimeError):
    """Rejection sampling exceeded its cap or a kernel was not factorizable."""


@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    n: int
    k: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")


def generate(spec: GeneratorSpec) -> FactorGraph:
    return FAMILIES[spec.family](spec.n, spec.k, spec.seed, **spec.params)


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def torus_distance(a: int, b: int, k: int) -> int:
    """Distance on the cycle 1..K with 1 and K adjacent."""
    d = abs(a - b)
    return min(d, k - d)


def gen_chain(
    n: int,
    k: int,
    seed: int,
    kernel_scale: float = 0.5,
    kernel_bandwidth: float = 1.0,
    coupling: float = 2.5,
    jitter: float = 1e-8,
) -> FactorGraph:
    """Chain with GP-drawn unary tables and torus-distance pair couplings.

    The N*K unary values are one joint draw from a zero-mean GP on the grid
    {1..N} x {1..K} with a squared-exponential kernel (amplitude kernel_scale,
    length-scale kernel_bandwidth). Binary tables are coupling * distance on
    the K-state torus. N unary + (N-1) binary factors, identity ordering.
    """
    if n * k > 10_000:
        raise ValueError("kernel matrix would exceed the N*K <= 10^4 feasibility bound")
    rng = np.random.default_rng(seed)
    grid = np.array([(i, j) for i in range(1, n + 1) for j in range(1, k + 1)], dtype=float)
    sq = np.sum((grid[:, None, :] - grid[None, :, :]) ** 2, axis=-1)
    cov = kernel_scale * np.exp(-sq / (2.0 * kernel_bandwidth**2))
    chol = None
    eps = jitter
    while eps <= 1e-2:
        try:
            chol = np.linalg.cholesky(cov + eps * np.eye(n * k))
            break
        except np.linalg.LinAlgError:
            eps *= 10.0
    if chol is None:
        raise GenerationError("GP kernel not positive definite even after jitter escalation")
    unary_values = (chol @ rng.standard_normal(n * k)).reshape(n, k)

    factors = [Factor(id=v - 1, scope=(v,), table=unary_values[v - 1].copy()) for v in range(1, n + 1)]
    pair_table = np.array(
        [coupling * torus_distance(a, b, k) for a in range(1, k + 1) for b in range(1, k + 1)],
        dtype=float,
    )
    for v in range(1, n):
        factors.append(Factor(id=len(factors), scope=(v, v + 1), table=pair_table.copy()))
    return FactorGraph(
        num_variables=n, num_states=k, factors=tuple(factors), ordering=tuple(range(1, n + 1))
    )


# ---------------------------------------------------------------------------
# permuted chains
# ---------------------------------------------------------------------------


def gen_permuted_chain(n: int, k: int, seed: int, alpha: float = 1.0) -> FactorGraph:
    """A proper Markov chain over a hidden random variable order.

    Conditional tables P(X_sigma(n) | X_sigma(n-1)) have symmetric-Dirichlet
    rows; the chain's root variable gets a Dirichlet prior as a unary factor,
    so the product is normalized and log Z = 0. The search ordering stays the
    identity over raw indices, so pair factors straddle non-adjacent depths.
    """
    rng = np.random.default_rng(seed)
    sigma = rng.permutation(n) + 1
    factors = []
    root = int(sigma[0])
    prior = rng.dirichlet(np.full(k, alpha))
    factors.append(Factor(id=0, scope=(root,), table=np.log(prior)))
    for step in range(1, n):
        u, v = int(sigma[step - 1]), int(sigma[step])
        cpt = np.stack([rng.dirichlet(np.full(k, alpha)) for _ in range(k)])  # [prev, next]
        log_cpt = np.log(cpt)
        if u < v:
            table = log_cpt.reshape(-1)
            scope = (u, v)
        else:
            table = log_cpt.T.reshape(-1)
            scope = (v, u)
        factors.append(Factor(id=len(factors), scope=scope, table=table))
    return FactorGraph(
        num_variables=n, num_states=k, factors=tuple(factors), ordering=tuple(range(1, n + 1))
    )


# ---------------------------------------------------------------------------
# random graphs: connectivity, cliques, orderings
# ---------------------------------------------------------------------------


def _erdos_renyi(num_nodes: int, p: float, rng) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {u: set() for u in range(num_nodes)}
    for u in range(num_nodes):
        for v in range(u + 1, num_nodes):
            if rng.random() < p:
                adj[u].add(v)
                adj[v].add(u)
    return adj


def _connected(adj: dict[int, set[int]]) -> bool:
    nodes = list(adj)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(adj)


def maximal_cliques(adj: dict[int, set[int]]) -> list[tuple[int, ...]]:
    """All maximal cliques (Bron-Kerbosch with pivoting), canonically sorted."""
    out: list[tuple[int, ...]] = []

    def bk(r: set, p: set, x: set):
        if not p and not x:
            out.append(tuple(sorted(r)))
            return
        pivot = max(sorted(p | x), key=lambda u: len(adj[u] & p))
        for v in sorted(p - adj[pivot]):
            bk(r | {v}, p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    bk(set(), set(adj), set())
    return sorted(out)


def _ordering_from_scopes(scopes: list[tuple[int, ...]], n: int) -> tuple[int, ...]:
    order: list[int] = []
    seen: set[int] = set()
    ranked = sorted(range(len(scopes)), key=lambda i: (-len(scopes[i]), i))
    for i in ranked:
        for v in scopes[i]:
            if v not in seen:
                seen.add(v)
                order.append(v)
    if len(order) != n:
        raise ValueError("factor scopes do not cover every variable")
    return tuple(order)


def fg1_ordering(graph: FactorGraph) -> tuple[int, ...]:
    """Depth order: walk factors by descending scope size (ties by id),
    appending variables the first time they appear."""
    return _ordering_from_scopes([f.scope for f in graph.factors], graph.num_variables)


def gen_fg1(
    n: int,
    k: int,
    seed: int,
    max_clique: int = 4,
    rejection_cap: int = 10_000,
) -> FactorGraph:
    """Connected random graph, one N(0,1) dense factor per maximal clique."""
    if n < 2:
        raise ValueError("fg1 needs at least two variables")
    rng = np.random.default_rng(seed)
    p = 2.0 * math.log(n) / n
    for _ in range(rejection_cap):
        adj = _erdos_renyi(n, p, rng)
        if not _connected(adj):
            continue
        cliques = maximal_cliques(adj)
        if max(len(c) for c in cliques) > max_clique:
            continue
        factors = []
        for clique in cliques:
            scope = tuple(v + 1 for v in clique)
            table = rng.standard_normal(k ** len(scope))
            factors.append(Factor(id=len(factors), scope=scope, table=table))
        ordering = _ordering_from_scopes([f.scope for f in factors], n)
        return FactorGraph(num_variables=n, num_states=k, factors=tuple(factors), ordering=ordering)
    raise GenerationError(f"no admissible fg1 graph within {rejection_cap} attempts")


def gen_fg2(
    n: int,
    seed: int,
    max_clique: int = 4,
    rejection_cap: int = 10_000,
    scale: float = 2.0,
) -> FactorGraph:
    """Binary variables in XOR-linked pairs plus MAJORITY factors on cliques
    of a random graph over the pairs. All factor outputs are scaled by 2."""
    if n < 4 or n % 2:
        raise ValueError("fg2 needs an even number of variables, at least 4")
    k = 2
    num_pairs = n // 2
    rng = np.random.default_rng(seed)
    p = 3.0 * math.log(num_pairs) / n
    for _ in range(rejection_cap):
        adj = _erdos_renyi(num_pairs, p, rng)
        if not _connected(adj):
            continue
        cliques = maximal_cliques(adj)
        if max(len(c) for c in cliques) > max_clique:
            continue
        factors = []
        not_table = scale * np.array([0.0, 1.0, 1.0, 0.0])
        for j in range(num_pairs):
            factors.append(
                Factor(id=len(factors), scope=(2 * j + 1, 2 * j + 2), table=not_table.copy())
            )
        for clique in cliques:
            members = [2 * j + 1 + int(rng.integers(0, 2)) for j in clique]
            scope = tuple(sorted(members))
            factors.append(
                Factor(id=len(factors), scope=scope, table=_majority_table(len(scope), scale))
            )
        return FactorGraph(
            num_variables=n,
            num_states=k,
            factors=tuple(factors),
            ordering=tuple(range(1, n + 1)),
        )
    raise GenerationError(f"no admissible fg2 graph within {rejection_cap} attempts")


def _majority_table(scope_size: int, scale: float) -> np.ndarray:
    """scale * [half or more of the scope variables in state 2], row-major."""
    table = np.zeros(2**scope_size)
    for idx in range(2**scope_size):
        bits = [(idx >> (scope_size - 1 - i)) & 1 for i in range(scope_size)]
        table[idx] = scale if sum(bits) * 2 >= scope_size else 0.0
    return table


FAMILIES = {
    "chains": lambda n, k, seed, **kw: gen_chain(n, k, seed, **kw),
    "permuted_chains": lambda n, k, seed, **kw: gen_permuted_chain(n, k, seed, **kw),
    "fg1": lambda n, k, seed, **kw: gen_fg1(n, k, seed, **kw),
    "fg2": lambda n, k, seed, **kw: gen_fg2(n, seed, **kw),
}
