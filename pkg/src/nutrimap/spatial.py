"""Neighborhood graph algebra: ICAR kernel and BYM2 scaling.

The structured spatial effect is an intrinsic CAR (ICAR) random field on
the ADM2 adjacency graph. Because the ICAR precision is the graph
Laplacian, which is singular, the effect is standardised per connected
component: alpha^2 is the geometric mean of the diagonal of the
component Laplacian's generalized inverse (zero eigenvalue excluded), so
that u2/alpha has unit geometric-mean marginal variance. Singleton
components carry no structured effect; their u2 entry is pinned to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import GraphError


@dataclass(frozen=True)
class AdjacencyGraph:
    """Symmetric neighborhood structure over ordered area ids."""

    nodes: tuple[str, ...]
    neighbor_sets: tuple[tuple[int, ...], ...]
    components: tuple[tuple[int, ...], ...]
    edge_i: np.ndarray  # one row per undirected edge, edge_i < edge_j
    edge_j: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edge_i)

    def index(self, node_id: str) -> int:
        try:
            return self.nodes.index(node_id)
        except ValueError:
            raise GraphError(f"unknown area id {node_id!r}") from None

    def neighbors_of(self, node_id: str) -> tuple[str, ...]:
        return tuple(self.nodes[k] for k in self.neighbor_sets[self.index(node_id)])

    def laplacian(self) -> sp.csr_matrix:
        """Sparse Laplacian: diagonal m_l (neighbor counts), off-diagonal -1."""
        n = self.n_nodes
        degrees = np.array([len(s) for s in self.neighbor_sets], dtype=float)
        rows = np.concatenate([np.arange(n), self.edge_i, self.edge_j])
        cols = np.concatenate([np.arange(n), self.edge_j, self.edge_i])
        vals = np.concatenate([degrees, -np.ones(2 * self.n_edges)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _parse_adjacency_text(text: str) -> dict[str, list[str]]:
    listed: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise GraphError(f"adjacency line {lineno} has no ':' separator: {line!r}")
        node, _, rest = line.partition(":")
        node = node.strip()
        if not node:
            raise GraphError(f"adjacency line {lineno} has an empty area id")
        if node in listed:
            raise GraphError(f"area {node!r} listed twice in adjacency file")
        neighbors = [tok.strip() for tok in rest.split(",") if tok.strip()]
        listed[node] = neighbors
    return listed


def build_graph(source, known_ids: Sequence[str] | None = None) -> AdjacencyGraph:
    """Build a validated adjacency graph.

    Parameters
    ----------
    source : path, str, or mapping
        Adjacency as ``"adm2_id: neighbor1,neighbor2,..."`` lines (a path
        to such a file, or the text itself), or a mapping from id to
        neighbor list. A line with no neighbors declares an isolated area.
    known_ids : sequence of str, optional
        Full universe of area ids (e.g. from the areas table). Ids in the
        file but not here raise; ids here but absent from the file become
        singleton components. Also fixes the node order.

    Raises
    ------
    GraphError
        On asymmetric listings (naming the pair), self-loops, or ids that
        do not resolve.
    """
    if isinstance(source, Mapping):
        listed = {str(k): [str(v) for v in vs] for k, vs in source.items()}
    else:
        if isinstance(source, Path) or ("\n" not in str(source) and Path(str(source)).exists()):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = str(source)
        listed = _parse_adjacency_text(text)

    if known_ids is not None:
        nodes = tuple(dict.fromkeys(str(k) for k in known_ids))
        unknown = sorted(set(listed) - set(nodes))
        if unknown:
            raise GraphError(f"adjacency file names unknown area id(s): {', '.join(unknown)}")
    else:
        nodes = tuple(sorted(listed))
    node_index = {node: i for i, node in enumerate(nodes)}

    neighbor_sets: list[set[int]] = [set() for _ in nodes]
    for node, neighbors in listed.items():
        i = node_index[node]
        for nb in neighbors:
            if nb == node:
                raise GraphError(f"area {node!r} lists itself as a neighbor")
            if nb not in node_index:
                raise GraphError(f"area {node!r} lists unknown neighbor {nb!r}")
            neighbor_sets[i].add(node_index[nb])
    for i, nbrs in enumerate(neighbor_sets):
        for j in nbrs:
            if i not in neighbor_sets[j]:
                raise GraphError(
                    f"asymmetric adjacency: {nodes[i]!r} lists {nodes[j]!r} "
                    f"but {nodes[j]!r} does not list {nodes[i]!r}"
                )

    edge_i, edge_j = [], []
    for i, nbrs in enumerate(neighbor_sets):
        for j in sorted(nbrs):
            if i < j:
                edge_i.append(i)
                edge_j.append(j)

    # connected components by traversal, reported in node order
    seen = np.zeros(len(nodes), dtype=bool)
    components = []
    for start in range(len(nodes)):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            k = stack.pop()
            comp.append(k)
            for nb in neighbor_sets[k]:
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        components.append(tuple(sorted(comp)))

    return AdjacencyGraph(
        nodes=nodes,
        neighbor_sets=tuple(tuple(sorted(s)) for s in neighbor_sets),
        components=tuple(components),
        edge_i=np.array(edge_i, dtype=np.int64),
        edge_j=np.array(edge_j, dtype=np.int64),
    )


def icar_quadratic(u2, graph: AdjacencyGraph) -> float:
    """Pairwise-difference quadratic form Σ_edges (u2_i - u2_j)².

    The ICAR log-kernel contribution is -0.5 times this value. Each
    undirected edge is counted once.
    """
    u2 = np.asarray(u2, dtype=float)
    if u2.shape != (graph.n_nodes,):
        raise GraphError(f"u2 has length {u2.size}, graph has {graph.n_nodes} nodes")
    if graph.n_edges == 0:
        return 0.0
    d = u2[graph.edge_i] - u2[graph.edge_j]
    return float(np.dot(d, d))


@dataclass(frozen=True)
class Bym2Scaling:
    """Per-component BYM2 standardisation factors.

    ``alpha_by_node`` is NaN on singleton components (no structured
    effect there). For a graph whose non-singleton part is a single
    component, the scalar properties expose that component's values.
    """

    component_sizes: tuple[int, ...]
    geometric_mean_by_component: tuple[float | None, ...]
    alpha_by_component: tuple[float | None, ...]
    alpha_by_node: np.ndarray

    def _single(self, values) -> float:
        scaled = [v for v in values if v is not None]
        if len(scaled) != 1:
            raise ValueError("graph has multiple scaled components; use the per-component values")
        return scaled[0]

    @property
    def geometric_mean_marginal_variance(self) -> float:
        return self._single(self.geometric_mean_by_component)

    @property
    def alpha(self) -> float:
        return self._single(self.alpha_by_component)

    def report(self, graph: AdjacencyGraph) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "component": range(len(self.component_sizes)),
                "size": self.component_sizes,
                "geometric_mean_marginal_variance": [
                    np.nan if v is None else v for v in self.geometric_mean_by_component
                ],
                "alpha": [np.nan if v is None else v for v in self.alpha_by_component],
            }
        )


def bym2_scaling(graph: AdjacencyGraph) -> Bym2Scaling:
    """Standardisation factors for the structured BYM2 component.

    Per connected component with at least two nodes, diagonalise the
    component Laplacian, drop the zero eigenvalue (the constant mode,
    removed by the sum-to-zero constraint), and form the generalized
    inverse diagonal. ``alpha`` is the square root of its geometric mean.
    """
    sizes, gms, alphas = [], [], []
    alpha_by_node = np.full(graph.n_nodes, np.nan)
    lap = graph.laplacian().toarray()
    any_scaled = False
    for comp in graph.components:
        sizes.append(len(comp))
        if len(comp) < 2:
            gms.append(None)
            alphas.append(None)
            continue
        idx = np.array(comp)
        sub = lap[np.ix_(idx, idx)]
        eigval, eigvec = np.linalg.eigh(sub)
        # one zero eigenvalue per connected component: the constant mode
        diag = (eigvec[:, 1:] ** 2 / eigval[1:]).sum(axis=1)
        gm = float(np.exp(np.mean(np.log(diag))))
        alpha = float(np.sqrt(gm))
        gms.append(gm)
        alphas.append(alpha)
        alpha_by_node[idx] = alpha
        any_scaled = True
    if not any_scaled:
        raise GraphError("graph has only singleton components; no structured effect definable")
    return Bym2Scaling(
        component_sizes=tuple(sizes),
        geometric_mean_by_component=tuple(gms),
        alpha_by_component=tuple(alphas),
        alpha_by_node=alpha_by_node,
    )
