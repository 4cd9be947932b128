"""Undirected graphs, file ingestion, route features, and zero-padded batching.

Route features assign a vector to every ordered node pair.  The stock choices
are walk-count histograms (entry r counts walks of length r+1 between the
pair, obtained by iterated multiplication with the adjacency matrix) and
one-hot shortest-distance bins.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import MASK_VALUE

# Shortest-distance sentinel for node pairs in different components.
UNREACHABLE = -1

# Marker usable inside a distance-bin list; pairs in different components
# fall into this bin.
UNREACHABLE_BIN = "unreachable"


class GraphFormatError(ValueError):
    """Malformed graph input (bad bytes, bad indices, broken invariants)."""


@dataclass
class Graph:
    """Simple undirected graph: symmetric hollow 0/1 adjacency, optional node features."""
    adjacency: np.ndarray
    node_features: np.ndarray | None = None
    name: str | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphFormatError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise GraphFormatError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphFormatError("self-loops are not allowed")
        if not np.all((a == 0) | (a == 1)):
            raise GraphFormatError("adjacency entries must be 0 or 1")
        self.adjacency = a.astype(np.int64)
        if self.node_features is not None:
            f = np.asarray(self.node_features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != a.shape[0]:
                raise GraphFormatError(
                    f"node_features must have one row per node, got {f.shape} for n={a.shape[0]}")
            self.node_features = f

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def relabeled(self, perm: Sequence[int]) -> "Graph":
        """Graph with node i of the result being node perm[i] of the original."""
        perm = np.asarray(perm)
        adj = self.adjacency[np.ix_(perm, perm)]
        feats = self.node_features[perm] if self.node_features is not None else None
        return Graph(adj, feats, self.name)


def graph_from_edges(n: int, edges: Sequence[Sequence[int]],
                     node_features=None, name: str | None = None) -> Graph:
    adj = np.zeros((n, n), dtype=np.int64)
    seen = set()
    for e in edges:
        if len(e) != 2:
            raise GraphFormatError(f"edge must be a pair, got {e!r}")
        a, b = int(e[0]), int(e[1])
        if not (0 <= a < n and 0 <= b < n):
            raise GraphFormatError(f"edge ({a},{b}) out of range for n={n}")
        if a == b:
            raise GraphFormatError(f"self-loop on node {a}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise GraphFormatError(f"duplicate edge ({a},{b})")
        seen.add(key)
        adj[a, b] = adj[b, a] = 1
    return Graph(adj, node_features, name)


# -- graph6 text format --------------------------------------------------------

def parse_graph6(line: str) -> Graph:
    """Decode one short-form graph6 line (n <= 62).

    Byte 0 is n+63.  The following bytes each carry 6 bits (value byte-63,
    most significant bit first) filling the upper triangle column by column:
    (0,1), (0,2), (1,2), (0,3), (1,3), (2,3), ...
    """
    s = line.strip()
    if s.startswith(">>graph6<<"):
        s = s[len(">>graph6<<"):]
    if not s:
        raise GraphFormatError("empty graph6 line")
    raw = s.encode("ascii", errors="replace")
    first = raw[0]
    if first == 126:
        raise GraphFormatError("long-form graph6 (n > 62) is not supported")
    if not 63 <= first <= 125:
        raise GraphFormatError(f"invalid graph6 byte {first} at offset 0")
    n = first - 63
    nbits = n * (n - 1) // 2
    nbytes = (nbits + 5) // 6
    if len(raw) - 1 != nbytes:
        raise GraphFormatError(
            f"graph6 body has {len(raw) - 1} bytes, expected {nbytes} for n={n}")
    bits = []
    for off, byte in enumerate(raw[1:], start=1):
        if not 63 <= byte <= 126:
            raise GraphFormatError(f"invalid graph6 byte {byte} at offset {off}")
        val = byte - 63
        bits.extend((val >> shift) & 1 for shift in range(5, -1, -1))
    if any(bits[nbits:]):
        raise GraphFormatError("nonzero padding bits in graph6 body")
    adj = np.zeros((n, n), dtype=np.int64)
    idx = 0
    for col in range(1, n):
        for row in range(col):
            if bits[idx]:
                adj[row, col] = adj[col, row] = 1
            idx += 1
    return Graph(adj, name=s)


def encode_graph6(g: Graph) -> str:
    if g.n > 62:
        raise GraphFormatError("short-form graph6 supports n <= 62")
    bits = []
    for col in range(1, g.n):
        for row in range(col):
            bits.append(int(g.adjacency[row, col]))
    while len(bits) % 6:
        bits.append(0)
    chars = [chr(g.n + 63)]
    for i in range(0, len(bits), 6):
        val = 0
        for b in bits[i:i + 6]:
            val = (val << 1) | b
        chars.append(chr(val + 63))
    return "".join(chars)


def read_graph6_file(path) -> list[Graph]:
    graphs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                graphs.append(parse_graph6(line))
            except GraphFormatError as exc:
                raise GraphFormatError(f"{path}:{ln}: {exc}") from exc
    return graphs


# -- JSON graph documents --------------------------------------------------------

def load_graph_json(doc: dict) -> Graph:
    """Build a Graph from {name?, n, edges, node_features?}."""
    if "n" not in doc or "edges" not in doc:
        raise GraphFormatError("graph document needs 'n' and 'edges'")
    return graph_from_edges(int(doc["n"]), doc["edges"],
                            node_features=doc.get("node_features"),
                            name=doc.get("name"))


def graph_to_json(g: Graph) -> dict:
    doc = {"n": g.n, "edges": [[a, b] for a, b in g.edges()]}
    if g.name is not None:
        doc["name"] = g.name
    if g.node_features is not None:
        doc["node_features"] = g.node_features.tolist()
    return doc


# -- route features ---------------------------------------------------------------

@dataclass
class RouteTensor:
    """Feature vector per ordered node pair, shaped (n, n, f)."""
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[0] != d.shape[1]:
            raise GraphFormatError(f"route tensor must be (n, n, f), got {d.shape}")
        self.data = d

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def f(self) -> int:
        return self.data.shape[2]


def route_histogram(g: Graph, k: int) -> RouteTensor:
    """Stack walk counts of lengths 1..k: data[a, b, r-1] = (A^r)[a, b]."""
    if k < 1:
        raise ValueError(f"route histogram needs k >= 1, got {k}")
    a = g.adjacency.astype(np.float64)
    out = np.zeros((g.n, g.n, k))
    power = np.eye(g.n)
    for r in range(k):
        power = power @ a
        out[:, :, r] = power
    return RouteTensor(out)


def shortest_distances(g: Graph) -> np.ndarray:
    """All-pairs BFS distances; UNREACHABLE marks cross-component pairs."""
    n = g.n
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    neighbors = [np.nonzero(g.adjacency[v])[0] for v in range(n)]
    for src in range(n):
        dist[src, src] = 0
        frontier = [src]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for u in neighbors[v]:
                    if dist[src, u] == UNREACHABLE:
                        dist[src, u] = d
                        nxt.append(u)
            frontier = nxt
    return dist


def distance_bin_features(g: Graph, bins: Sequence) -> RouteTensor:
    """One-hot shortest-distance bins per pair.

    Each bin is a (lo, hi) range (hi None for open-ended) or UNREACHABLE_BIN.
    The finite bins must tile [0, inf) without overlap and exactly one
    UNREACHABLE_BIN must be present so every pair lands in one bin.
    """
    ranges: list[tuple[int, int | None]] = []
    unreachable_slot = None
    for i, b in enumerate(bins):
        if b == UNREACHABLE_BIN:
            if unreachable_slot is not None:
                raise ValueError("duplicate unreachable bin")
            unreachable_slot = i
            continue
        lo, hi = b
        ranges.append((int(lo), None if hi is None else int(hi)))
        if hi is not None and hi < lo:
            raise ValueError(f"bin {b} is empty")
    if unreachable_slot is None:
        raise ValueError("bins must include the unreachable bin")
    # coverage and overlap over [0, inf)
    finite = sorted(ranges, key=lambda r: r[0])
    cursor = 0
    for lo, hi in finite:
        if lo != cursor:
            raise ValueError(f"bins must tile [0, inf) without gaps or overlap near {lo}")
        if hi is None:
            cursor = None
            break
        cursor = hi + 1
    if cursor is not None:
        raise ValueError("bins must cover all finite distances (last bin must be open-ended)")

    dist = shortest_distances(g)
    out = np.zeros((g.n, g.n, len(bins)))
    for i, b in enumerate(bins):
        if b == UNREACHABLE_BIN:
            hit = dist == UNREACHABLE
        else:
            lo, hi = b
            hit = (dist >= lo) if hi is None else ((dist >= lo) & (dist <= hi))
            hit &= dist != UNREACHABLE
        out[:, :, i] = hit
    return RouteTensor(out)


DEFAULT_DISTANCE_BINS = [(0, 0), (1, 1), (2, 3), (4, None), UNREACHABLE_BIN]


def route_features(g: Graph, k: int, bins: Sequence | None = None) -> RouteTensor:
    """Walk-count histogram, optionally concatenated with distance bins."""
    hist = route_histogram(g, k).data
    if bins is None:
        return RouteTensor(hist)
    extra = distance_bin_features(g, bins).data
    return RouteTensor(np.concatenate([hist, extra], axis=-1))


def attention_ball_mask(dist: np.ndarray, radius: int, min_radius: int = 0) -> np.ndarray:
    """Additive mask admitting pairs with min_radius <= distance <= radius.

    Unreachable pairs are always masked.  min_radius > 0 gives the shell
    variant.
    """
    if radius < 0 or min_radius < 0:
        raise ValueError("radius must be >= 0")
    ok = (dist >= min_radius) & (dist <= radius) & (dist != UNREACHABLE)
    return np.where(ok, 0.0, MASK_VALUE)


# -- batching -------------------------------------------------------------------

@dataclass
class BatchedGraphs:
    """Zero-padded stack of graphs with additive masks.

    The optional pool slot is the last position of every sample: a learned
    global scratch register with no route features, kept attendable from and
    toward every real node.
    """
    features: np.ndarray      # (B, N_max, F_nodes)
    routes: np.ndarray        # (B, N_max, N_max, F_route)
    node_mask: np.ndarray     # (B, N_max) additive, 0 real / MASK_VALUE padded
    route_mask: np.ndarray    # (B, N_max, N_max) additive structural mask
    distances: np.ndarray     # (B, N_max, N_max), UNREACHABLE off-graph
    node_counts: np.ndarray   # (B,) real node counts (pool excluded)
    pool_index: int | None

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]

    @property
    def n_max(self) -> int:
        return self.features.shape[1]

    def real_node_indicator(self) -> np.ndarray:
        """(B, N_max) 0/1 array marking real graph nodes (pool and pads 0)."""
        out = np.zeros(self.features.shape[:2])
        for i, c in enumerate(self.node_counts):
            out[i, :c] = 1.0
        return out


def batch(graphs: Sequence[Graph], route_tensors: Sequence[RouteTensor],
          pool: bool = True) -> BatchedGraphs:
    if len(graphs) != len(route_tensors):
        raise ValueError("graphs and route tensors must align")
    f_routes = {rt.f for rt in route_tensors}
    if len(f_routes) != 1:
        raise ValueError(f"route feature dimensions disagree: {sorted(f_routes)}")
    f_route = f_routes.pop()
    feats = []
    for g in graphs:
        f = g.node_features if g.node_features is not None else np.ones((g.n, 1))
        feats.append(np.asarray(f, dtype=np.float64))
    f_nodes = {f.shape[1] for f in feats}
    if len(f_nodes) != 1:
        raise ValueError(f"node feature dimensions disagree: {sorted(f_nodes)}")
    f_node = f_nodes.pop()

    b = len(graphs)
    counts = np.array([g.n for g in graphs], dtype=np.int64)
    n_max = int(counts.max()) + (1 if pool else 0)
    pool_index = n_max - 1 if pool else None

    features = np.zeros((b, n_max, f_node))
    routes = np.zeros((b, n_max, n_max, f_route))
    node_mask = np.full((b, n_max), MASK_VALUE)
    route_mask = np.full((b, n_max, n_max), MASK_VALUE)
    distances = np.full((b, n_max, n_max), UNREACHABLE, dtype=np.int64)

    for i, (g, rt) in enumerate(zip(graphs, route_tensors)):
        if rt.n != g.n:
            raise ValueError(f"route tensor size {rt.n} != node count {g.n}")
        n = g.n
        features[i, :n] = feats[i]
        routes[i, :n, :n] = rt.data
        node_mask[i, :n] = 0.0
        route_mask[i, :n, :n] = 0.0
        distances[i, :n, :n] = shortest_distances(g)
        if pool:
            node_mask[i, pool_index] = 0.0
            route_mask[i, pool_index, :n] = 0.0
            route_mask[i, :n, pool_index] = 0.0
            route_mask[i, pool_index, pool_index] = 0.0
    return BatchedGraphs(features, routes, node_mask, route_mask,
                         distances, counts, pool_index)


def locality_mask(batched: BatchedGraphs, radius: int | None) -> np.ndarray:
    """Per-batch additive route mask for one attention-ball radius.

    None means unrestricted attention.  The pool slot is exempt from the
    locality constraint in both directions.
    """
    base = batched.route_mask
    if radius is None:
        return base
    allowed = base == 0.0
    within = (batched.distances >= 0) & (batched.distances <= radius)
    if batched.pool_index is not None:
        pool = np.zeros_like(within)
        pool[:, batched.pool_index, :] = True
        pool[:, :, batched.pool_index] = True
        within = within | pool
    return np.where(allowed & within, 0.0, MASK_VALUE)
