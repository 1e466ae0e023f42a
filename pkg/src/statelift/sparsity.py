"""Correlative sparsity graph and clique decomposition of lifted problems."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import networkx as nx

from .chainmodel import LiftedPOP


@dataclass
class CSPGraph:
    vertices: list
    edges: set  # frozenset pairs

    def adjacency(self) -> dict[int, set]:
        adj = {v: set() for v in self.vertices}
        for e in self.edges:
            u, v = tuple(e)
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(tuple(e) for e in self.edges)
        return g

    def dump(self, names=None) -> str:
        """Edge list, one ``u v`` pair per line."""
        label = (lambda v: names(v)) if names else str
        rows = sorted(tuple(sorted(e)) for e in self.edges)
        return "\n".join(f"{label(u)} {label(v)}" for u, v in rows) + ("\n" if rows else "")


@dataclass
class CliqueDecomposition:
    cliques: list  # list of sorted tuples of variable ids
    tree_edges: list  # (a, b) index pairs, a < b
    separators: dict  # (a, b) -> tuple of ids
    assignment: dict = field(default_factory=dict)  # constraint index -> clique index
    objective_clique: int = 0
    ordering: list = field(default_factory=list)

    @property
    def max_clique_size(self) -> int:
        return max(len(c) for c in self.cliques)

    def tree_neighbors(self) -> dict[int, list]:
        nb = {i: [] for i in range(len(self.cliques))}
        for a, b in self.tree_edges:
            nb[a].append(b)
            nb[b].append(a)
        return nb

    def satisfies_rip(self) -> bool:
        nb = self.tree_neighbors()
        allv = set().union(*map(set, self.cliques))
        for v in allv:
            holders = {i for i, c in enumerate(self.cliques) if v in c}
            start = next(iter(holders))
            seen, stack = {start}, [start]
            while stack:
                a = stack.pop()
                for b in nb[a]:
                    if b in holders and b not in seen:
                        seen.add(b)
                        stack.append(b)
            if seen != holders:
                return False
        return True


def build_graph(pop: LiftedPOP) -> CSPGraph:
    vertices = list(range(len(pop.space)))
    edges = set()
    for m in pop.objective.terms:
        for u, v in combinations(sorted({w for w, _ in m}), 2):
            edges.add(frozenset((u, v)))
    for con in pop.constraints:
        for u, v in combinations(sorted(con.poly.support()), 2):
            edges.add(frozenset((u, v)))
    return CSPGraph(vertices, edges)


def chain_elimination_order(pop: LiftedPOP) -> list[int]:
    """``s_{n,*}, x_n, s_{n-1,*}, x_{n-1}, ..., s_{1,*}, x_1``."""
    space = pop.space
    stages = sorted({v.stage for v in space}, reverse=True)
    order = []
    for st in stages:
        order += space.stage_vars(st, "s")
        order += space.stage_vars(st, "x")
    return order


def _eliminate(adj: dict[int, set], order: Sequence[int]) -> tuple[list[set], int]:
    """Eliminate in ``order``; return candidate cliques and the fill count."""
    adj = {v: set(nb) for v, nb in adj.items()}
    cliques, fill = [], 0
    for v in order:
        nb = adj[v]
        for a, b in combinations(nb, 2):
            if b not in adj[a]:
                adj[a].add(b)
                adj[b].add(a)
                fill += 1
        cliques.append({v} | nb)
        for u in nb:
            adj[u].discard(v)
        del adj[v]
    return cliques, fill


def min_degree_order(adj: dict[int, set], tiebreak: dict[int, int]) -> list[int]:
    adj = {v: set(nb) for v, nb in adj.items()}
    order = []
    while adj:
        v = min(adj, key=lambda u: (len(adj[u]), tiebreak[u]))
        nb = adj[v]
        for a, b in combinations(nb, 2):
            adj[a].add(b)
            adj[b].add(a)
        for u in nb:
            adj[u].discard(v)
        del adj[v]
        order.append(v)
    return order


def _maximal(cands: list[set]) -> list[set]:
    cands = sorted(cands, key=len, reverse=True)
    out: list[set] = []
    for c in cands:
        if not any(c <= o for o in out):
            out.append(c)
    return out


def chordal_cliques(g: CSPGraph, pop: LiftedPOP) -> CliqueDecomposition:
    """Maximal cliques of a chordal extension, a clique tree and separators.

    The column-by-column ordering is used when it is a perfect elimination
    ordering; otherwise the graph is filled with a minimum-degree ordering.
    """
    adj = g.adjacency()
    order = chain_elimination_order(pop)
    cands, fill = _eliminate(adj, order)
    if fill:
        rank = {v: i for i, v in enumerate(order)}
        order = min_degree_order(adj, rank)
        cands, fill = _eliminate(adj, order)
    space = pop.space

    def key(c):
        return (max(space.variables[v].stage for v in c), tuple(sorted(c)))

    cliques = [tuple(sorted(c)) for c in sorted(_maximal(cands), key=key)]

    tree_edges: list[tuple[int, int]] = []
    if len(cliques) > 1:
        cg = nx.Graph()
        cg.add_nodes_from(range(len(cliques)))
        for a, b in combinations(range(len(cliques)), 2):
            w = len(set(cliques[a]) & set(cliques[b]))
            if w:
                cg.add_edge(a, b, weight=w)
        forest = nx.maximum_spanning_tree(cg, weight="weight", algorithm="kruskal")
        tree_edges = sorted(tuple(sorted(e)) for e in forest.edges())
    separators = {
        (a, b): tuple(sorted(set(cliques[a]) & set(cliques[b]))) for a, b in tree_edges
    }
    assignment = {}
    for idx, con in enumerate(pop.constraints):
        supp = con.poly.support()
        for ci, c in enumerate(cliques):
            if supp <= set(c):
                assignment[idx] = ci
                break
        else:  # pragma: no cover - cannot happen for an elimination-based extension
            raise RuntimeError("constraint support not covered by any clique")
    obj_supp = pop.objective.support()
    obj_clique = next(i for i, c in enumerate(cliques) if obj_supp <= set(c))
    return CliqueDecomposition(cliques, tree_edges, separators, assignment, obj_clique, order)


def treewidth_formula(ranks: Sequence[int]) -> int:
    """``max_i (r_{i-1} + r_i)`` for ``ranks = (r_1, ..., r_n)``.

    There is no state before stage 1, so the first clique ``{x_1, s_1}``
    contributes ``r_1``; for ``n >= 2`` this never exceeds ``r_1 + r_2``.
    """
    full = [0] + list(ranks)
    return max(a + b for a, b in zip(full, full[1:]))
