"""
Undirected graph over latent columns.
"""
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Tuple

import networkx as nx
import numpy as np

Edge = Tuple[int, int]


def _edge(q: int, s: int) -> Edge:
    if q == s:
        raise ValueError(f"self-loop ({q}, {s}) is not allowed")
    return (q, s) if q < s else (s, q)


@dataclass(frozen=True)
class Graph:
    """Edge set plus a packed boolean adjacency for O(1) neighbor moves."""
    n_vertices: int
    edges: FrozenSet[Edge]

    def __post_init__(self):
        for q, s in self.edges:
            if not (0 <= q < s < self.n_vertices):
                raise ValueError(f"invalid edge ({q}, {s}) for {self.n_vertices} vertices")
        adjacency = np.zeros((self.n_vertices, self.n_vertices), dtype=bool)
        for q, s in self.edges:
            adjacency[q, s] = adjacency[s, q] = True
        adjacency.setflags(write=False)
        object.__setattr__(self, "_adjacency", adjacency)

    @classmethod
    def from_edges(cls, n_vertices: int, edges: Iterable[Tuple[int, int]]) -> "Graph":
        return cls(n_vertices, frozenset(_edge(q, s) for q, s in edges))

    @classmethod
    def full(cls, n_vertices: int) -> "Graph":
        return cls(n_vertices, frozenset((q, s) for q in range(n_vertices) for s in range(q + 1, n_vertices)))

    @classmethod
    def empty(cls, n_vertices: int) -> "Graph":
        return cls(n_vertices, frozenset())

    @property
    def adjacency(self) -> np.ndarray:
        return self._adjacency

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def max_edges(self) -> int:
        return self.n_vertices * (self.n_vertices - 1) // 2

    @property
    def is_full(self) -> bool:
        return self.n_edges == self.max_edges

    def has_edge(self, q: int, s: int) -> bool:
        return bool(self._adjacency[q, s])

    def neighbors(self, q: int) -> np.ndarray:
        return np.flatnonzero(self._adjacency[q])

    def toggle(self, q: int, s: int) -> "Graph":
        """One-edge neighbor: add (q, s) if absent, remove it otherwise."""
        e = _edge(q, s)
        edges = self.edges - {e} if e in self.edges else self.edges | {e}
        return Graph(self.n_vertices, edges)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_vertices))
        g.add_edges_from(self.edges)
        return g

    def is_decomposable(self) -> bool:
        return nx.is_chordal(self.to_networkx())

    def edge_list(self) -> List[Edge]:
        return sorted(self.edges)

    def to_text(self) -> str:
        """Edge-list text: first line vertex count, then one 'q s' pair per line."""
        lines = [str(self.n_vertices)] + [f"{q} {s}" for q, s in self.edge_list()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Graph":
        lines = [line.split() for line in text.strip().splitlines() if line.strip()]
        n = int(lines[0][0])
        return cls.from_edges(n, ((int(q), int(s)) for q, s in lines[1:]))

    def __repr__(self) -> str:
        return f"Graph(J={self.n_vertices}, |E|={self.n_edges})"
