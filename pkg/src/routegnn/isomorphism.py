"""Graph-distinguishability lab.

Pits classic dimension-1 color refinement against an untrained route-attention
network on families of same-size same-degree regular graphs, which color
refinement provably cannot tell apart.  A pair counts as separated when the
max-abs difference of the two sum-readout embeddings exceeds a threshold.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, RouteTensor, batch, graph_from_edges, route_histogram
from .model import ModelConfig, RouteGraphNetwork, sum_readout


# -- dimension-1 color refinement ------------------------------------------------

@dataclass
class WLColoring:
    colors: list[int]
    histories: list[list[int]]     # per iteration: sorted class-size multiset
    iterations: int
    stable: bool


def _refine_once(colorings: list[list[int]], neighbor_lists: list[list[list[int]]],
                 table: dict) -> list[list[int]]:
    out = []
    for colors, neighbors in zip(colorings, neighbor_lists):
        new = []
        for v, c in enumerate(colors):
            signature = (c, tuple(sorted(colors[u] for u in neighbors[v])))
            if signature not in table:
                table[signature] = len(table)
            new.append(table[signature])
        out.append(new)
    return out


def _neighbor_lists(g: Graph) -> list[list[int]]:
    return [np.nonzero(g.adjacency[v])[0].tolist() for v in range(g.n)]


def wl_refine(g: Graph, max_iter: int | None = None) -> WLColoring:
    """Iterate color refinement from uniform colors until the partition stops splitting."""
    if max_iter is None:
        max_iter = max(g.n, 1)
    colors = [0] * g.n
    neighbors = _neighbor_lists(g)
    histories = [sorted(Counter(colors).values())]
    stable = False
    it = 0
    while it < max_iter:
        table: dict = {}
        (new,) = _refine_once([colors], [neighbors], table)
        it += 1
        if len(set(new)) == len(set(colors)):
            stable = True
            colors = new
            histories.append(sorted(Counter(colors).values()))
            break
        colors = new
        histories.append(sorted(Counter(colors).values()))
    return WLColoring(colors, histories, it, stable)


def wl_distinguish(g1: Graph, g2: Graph, max_iter: int | None = None) -> bool:
    """True when color refinement separates the two graphs.

    Both graphs are refined through a shared signature table so their color
    multisets stay comparable round by round.
    """
    if g1.n != g2.n:
        return True
    if max_iter is None:
        max_iter = max(g1.n, 1)
    c1, c2 = [0] * g1.n, [0] * g2.n
    n1, n2 = _neighbor_lists(g1), _neighbor_lists(g2)
    for _ in range(max_iter):
        table: dict = {}
        new1, new2 = _refine_once([c1, c2], [n1, n2], table)
        if sorted(new1) != sorted(new2):
            return True
        done = len(set(new1)) == len(set(c1)) and len(set(new2)) == len(set(c2))
        c1, c2 = new1, new2
        if done:
            break
    return False


# -- builtin graph families ------------------------------------------------------
# Regular families were enumerated by exhaustive search over labeled graphs and
# deduplicated up to isomorphism; the counts match the published collections.

_REGN6D3 = [
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (3, 5), (4, 5)],
    [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 4), (2, 5), (3, 4), (3, 5)],
]
_REGN7D4 = [
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4), (2, 5), (2, 6), (3, 5),
     (3, 6), (4, 5), (4, 6), (5, 6)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 5), (2, 4), (2, 6), (3, 5),
     (3, 6), (4, 5), (4, 6), (5, 6)],
]
_REGN8D3 = [
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 4), (3, 5), (4, 6), (4, 7), (5, 6),
     (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (3, 6), (4, 7), (5, 6),
     (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (2, 5), (3, 6), (3, 7), (4, 6), (4, 7),
     (5, 6), (5, 7)],
    [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 4), (2, 6), (3, 5), (3, 6), (4, 7),
     (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 4), (2, 6), (3, 5), (3, 7), (4, 7),
     (5, 6), (6, 7)],
]
_REGN8D4 = [
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4), (2, 5), (2, 6), (3, 5),
     (3, 7), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 5), (2, 3), (2, 6), (3, 7),
     (4, 5), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 5), (2, 4), (2, 6), (3, 5),
     (3, 7), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 5), (2, 4), (2, 6), (3, 6),
     (3, 7), (4, 5), (4, 7), (5, 6), (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 5), (2, 6), (2, 7), (3, 6),
     (3, 7), (4, 5), (4, 6), (4, 7), (5, 6), (5, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 5), (1, 6), (1, 7), (2, 5), (2, 6), (2, 7),
     (3, 5), (3, 6), (3, 7), (4, 5), (4, 6), (4, 7)],
]
_REGN8D5 = [
    [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (1, 3), (1, 4), (1, 5), (2, 3),
     (2, 6), (2, 7), (3, 6), (3, 7), (4, 5), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (1, 3), (1, 4), (1, 6), (2, 3),
     (2, 5), (2, 7), (3, 6), (3, 7), (4, 5), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7)],
    [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (1, 3), (1, 4), (1, 6), (2, 5),
     (2, 6), (2, 7), (3, 5), (3, 6), (3, 7), (4, 5), (4, 6), (4, 7), (5, 7), (6, 7)],
]
# 16-node 4-regular bipartite graph cospectral with the 4-cube but not
# isomorphic to it (obtained by switching the cube's edges across a suitable
# 4-vertex set and verified numerically).
_HOFFMAN = [
    (0, 1), (0, 7), (0, 11), (0, 13), (1, 3), (1, 5), (1, 9), (2, 5), (2, 6), (2, 9),
    (2, 10), (3, 4), (3, 8), (3, 13), (4, 6), (4, 9), (4, 12), (5, 8), (5, 11), (6, 7),
    (6, 14), (7, 9), (7, 15), (8, 10), (8, 12), (10, 11), (10, 14), (11, 15), (12, 13),
    (12, 14), (13, 15), (14, 15),
]


def hypercube_graph(dim: int = 4) -> Graph:
    """dim-dimensional hypercube: binary indices adjacent iff they differ in one bit."""
    n = 1 << dim
    adj = np.zeros((n, n), dtype=np.int64)
    for v in range(n):
        for bit in range(dim):
            adj[v, v ^ (1 << bit)] = 1
    return Graph(adj, name=f"Q{dim}")


def _edge_family(name: str, lists) -> list[Graph]:
    return [graph_from_edges(max(max(e) for e in edges) + 1, edges, name=f"{name}-G{i + 1}")
            for i, edges in enumerate(lists)]


def builtin_graphs(name: str) -> list[Graph]:
    """Hard-coded graph families by name (case and punctuation insensitive)."""
    key = "".join(ch for ch in name.lower() if ch.isalnum())
    families = {
        "regn6d3": lambda: _edge_family("RegN6D3", _REGN6D3),
        "regn7d4": lambda: _edge_family("RegN7D4", _REGN7D4),
        "regn8d3": lambda: _edge_family("RegN8D3", _REGN8D3),
        "regn8d4": lambda: _edge_family("RegN8D4", _REGN8D4),
        "regn8d5": lambda: _edge_family("RegN8D5", _REGN8D5),
        "q4": lambda: [hypercube_graph(4)],
        "hoffman": lambda: [graph_from_edges(16, _HOFFMAN, name="Hoffman")],
        "q4vshoffman": lambda: [hypercube_graph(4),
                                graph_from_edges(16, _HOFFMAN, name="Hoffman")],
    }
    if key not in families:
        raise KeyError(f"unknown builtin graph set {name!r}; choose from "
                       f"{sorted(families)}")
    return families[key]()


BUILTIN_SET_NAMES = ("RegN6D3", "RegN7D4", "RegN8D3", "RegN8D4", "RegN8D5",
                     "Q4", "Hoffman", "Q4vsHoffman")


def spectrum_compare(g1: Graph, g2: Graph, tol: float = 1e-8) -> bool:
    """True when the adjacency spectra agree within tol (sorted eigenvalues)."""
    if g1.n != g2.n:
        return False
    s1 = np.sort(np.linalg.eigvalsh(g1.adjacency.astype(np.float64)))
    s2 = np.sort(np.linalg.eigvalsh(g2.adjacency.astype(np.float64)))
    return bool(np.allclose(s1, s2, atol=tol))


# -- untrained-network separation -------------------------------------------------

def separation_model_config(score_map: str = "sigmoid", k: int = 4,
                            radius: int | None = None) -> ModelConfig:
    """Untrained 1-layer setup used for the separation runs.

    Hidden size 8, 4 heads, key and route-key size 2, route feature = walk
    histogram of length k, constant scalar node input, whole-graph radius.
    """
    return ModelConfig(n_layers=1, d_hidden=8, n_heads=4, d_k=2, d_v=2, d_r=2,
                       radius=radius, score_map=score_map, f_route=k, f_nodes=1,
                       dropout=0.0, head="node_regression", n_tasks=1)


@dataclass
class SeparationReport:
    set_name: str
    graph_names: list[str]
    threshold: float
    seed: int
    score_map: str
    k: int
    norm: str
    pairs: list[dict] = field(default_factory=list)

    @property
    def n_graphs(self) -> int:
        return len(self.graph_names)

    @property
    def pairs_total(self) -> int:
        return len(self.pairs)

    @property
    def pairs_gi_separated(self) -> int:
        return sum(p["separated"] for p in self.pairs)

    @property
    def pairs_wl_separated(self) -> int:
        return sum(p["wl_separated"] for p in self.pairs)

    def graphs_separated(self) -> int:
        """Graphs whose embedding differs from every other graph in the set."""
        bad = set()
        for p in self.pairs:
            if not p["separated"]:
                bad.add(p["i"])
                bad.add(p["j"])
        return self.n_graphs - len(bad)

    def all_separated(self) -> bool:
        return self.pairs_gi_separated == self.pairs_total

    def to_doc(self) -> dict:
        return {
            "set": self.set_name,
            "graphs": self.graph_names,
            "threshold": self.threshold,
            "seed": self.seed,
            "score_map": self.score_map,
            "route_histogram_k": self.k,
            "norm": self.norm,
            "pairs_total": self.pairs_total,
            "pairs_separated": self.pairs_gi_separated,
            "pairs_wl_separated": self.pairs_wl_separated,
            "graphs_total": self.n_graphs,
            "graphs_separated": self.graphs_separated(),
            "pairs": self.pairs,
        }


def _embedding_gap(a: np.ndarray, b: np.ndarray, norm: str) -> float:
    if norm == "maxabs":
        return float(np.max(np.abs(a - b)))
    if norm == "l2":
        return float(np.linalg.norm(a - b))
    raise ValueError(f"unknown norm {norm!r}")


def graph_embeddings(graphs, config: ModelConfig, seed: int,
                     feature_scale: str = "none") -> np.ndarray:
    """Sum-readout embeddings from one randomly initialized, untrained network.

    feature_scale="channel_max" divides every walk-count channel by its max
    absolute value over the whole set.  Long histograms carry counts in the
    tens of thousands, which drive sigmoids to exactly 1.0 in float64 and
    erase the differences the comparison is after; one shared linear rescale
    keeps the map injective while staying inside the representable range.
    """
    model = RouteGraphNetwork(config, seed=seed)
    route_tensors = []
    for g in graphs:
        plain = Graph(g.adjacency, node_features=np.ones((g.n, config.f_nodes)), name=g.name)
        route_tensors.append((plain, route_histogram(plain, config.f_route)))
    if feature_scale == "channel_max":
        peak = np.ones(config.f_route)
        for _, rt in route_tensors:
            peak = np.maximum(peak, np.abs(rt.data).max(axis=(0, 1)))
        route_tensors = [(g, RouteTensor(rt.data / peak)) for g, rt in route_tensors]
    elif feature_scale != "none":
        raise ValueError(f"unknown feature_scale {feature_scale!r}")
    out = []
    for plain, routes in route_tensors:
        batched = batch([plain], [routes], pool=config.pool)
        h = model.forward(batched, training=False)
        out.append(sum_readout(h, batched).data[0])
    return np.stack(out)


def gi_separate(graphs, config: ModelConfig | None = None, seed: int = 0,
                threshold: float = 1e-4, norm: str = "maxabs",
                set_name: str = "custom", feature_scale: str = "none") -> SeparationReport:
    """Pairwise separation of a graph set by an untrained network vs color refinement."""
    graphs = list(graphs)
    if config is None:
        config = separation_model_config()
    embeddings = graph_embeddings(graphs, config, seed, feature_scale=feature_scale)
    report = SeparationReport(
        set_name=set_name,
        graph_names=[g.name or f"G{i + 1}" for i, g in enumerate(graphs)],
        threshold=threshold, seed=seed, score_map=config.score_map,
        k=config.f_route, norm=norm)
    for i in range(len(graphs)):
        for j in range(i + 1, len(graphs)):
            gap = _embedding_gap(embeddings[i], embeddings[j], norm)
            report.pairs.append({
                "i": i, "j": j,
                "gap": gap,
                "separated": bool(gap > threshold),
                "wl_separated": wl_distinguish(graphs[i], graphs[j]),
            })
    return report
