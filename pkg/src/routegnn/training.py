"""Losses, metrics, the training loop, and synthetic desk-scale tasks.

The node task asks for the number of nodes within distance 2 of each node, a
quantity one-hop aggregation cannot read off directly.  The graph task asks
whether the graph contains a 4-cycle.  Both have exact brute-force labels, so
learning progress is measurable without any external data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import Graph, RouteTensor, batch, graph_to_json, load_graph_json, \
    route_histogram, shortest_distances
from .model import RouteGraphNetwork, graph_head, node_head
from .nn import adam_init, adam_step
from .tensor import NonFiniteError, Tensor, softplus, tabs, tsum


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    decay_epochs: tuple = (40, 70)
    decay_factor: float = 0.3
    batch_size: int = 16
    metric: str = "mae"          # "mae" (lower better) or "auc" (higher better)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must be in (0, 1)")
        if self.metric not in ("mae", "auc"):
            raise ValueError(f"metric must be 'mae' or 'auc', got {self.metric!r}")
        self.decay_epochs = tuple(self.decay_epochs)


# -- losses and metrics -----------------------------------------------------------

def masked_mae(pred: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean absolute error over entries where mask is true."""
    targets = np.asarray(targets, dtype=np.float64)
    maskf = np.asarray(mask, dtype=np.float64)
    if pred.shape != targets.shape or pred.shape != maskf.shape:
        raise ValueError(f"masked_mae shapes disagree: pred {pred.shape}, "
                         f"targets {targets.shape}, mask {maskf.shape}")
    count = maskf.sum()
    if count == 0:
        raise ValueError("masked_mae: mask selects no entries")
    return tsum(tabs(pred - Tensor(targets)) * Tensor(maskf)) * (1.0 / count)


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with logits over observed entries.

    Uses softplus(x) - x * t, which never overflows for large |x|.
    """
    targets = np.asarray(targets, dtype=np.float64)
    maskf = np.asarray(mask, dtype=np.float64)
    if logits.shape != targets.shape or logits.shape != maskf.shape:
        raise ValueError(f"masked_cross_entropy shapes disagree: logits {logits.shape}, "
                         f"targets {targets.shape}, mask {maskf.shape}")
    count = maskf.sum()
    if count == 0:
        raise ValueError("masked_cross_entropy: mask selects no entries")
    per_entry = softplus(logits) - logits * Tensor(targets)
    return tsum(per_entry * Tensor(maskf)) * (1.0 / count)


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-based AUC with ties counted half; None when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# -- datasets ---------------------------------------------------------------------

@dataclass
class LabeledGraph:
    graph: Graph
    routes: RouteTensor
    targets: np.ndarray   # (n, n_tasks) for node tasks, (n_tasks,) for graph tasks
    mask: np.ndarray      # booleans, same shape as targets


@dataclass
class GraphDataset:
    items: list[LabeledGraph]
    task: str             # "node" or "graph"
    n_tasks: int
    k_hist: int

    def __len__(self) -> int:
        return len(self.items)

    def zero_routes(self) -> "GraphDataset":
        """Copy with all route features zeroed (the ablation input)."""
        items = [LabeledGraph(it.graph, RouteTensor(np.zeros_like(it.routes.data)),
                              it.targets, it.mask) for it in self.items]
        return GraphDataset(items, self.task, self.n_tasks, self.k_hist)


@dataclass
class LabeledBatch:
    graphs: "object"
    targets: np.ndarray
    mask: np.ndarray


def make_batch(items: list[LabeledGraph], task: str, pool: bool) -> LabeledBatch:
    batched = batch([it.graph for it in items], [it.routes for it in items], pool=pool)
    b, n_max = batched.features.shape[:2]
    n_tasks = items[0].targets.shape[-1]
    if task == "node":
        targets = np.zeros((b, n_max, n_tasks))
        mask = np.zeros((b, n_max, n_tasks), dtype=bool)
        for i, it in enumerate(items):
            targets[i, :it.graph.n] = it.targets
            mask[i, :it.graph.n] = it.mask
    else:
        targets = np.stack([it.targets for it in items])
        mask = np.stack([it.mask for it in items])
    return LabeledBatch(batched, targets, mask)


def batch_loss(model: RouteGraphNetwork, labeled: LabeledBatch, task: str,
               training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    h = model.forward(labeled.graphs, training=training, rng=rng)
    if task == "node":
        pred = node_head(h, model)
        return masked_mae(pred, labeled.targets, labeled.mask)
    logits = graph_head(h, labeled.graphs, model)
    return masked_cross_entropy(logits, labeled.targets, labeled.mask)


def _connected(adj: np.ndarray) -> bool:
    n = len(adj)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for u in np.nonzero(adj[v])[0]:
            if int(u) not in seen:
                seen.add(int(u))
                stack.append(int(u))
    return len(seen) == n


def _random_graph(rng: np.random.Generator, n: int, p: float,
                  require_connected: bool) -> Graph:
    while True:
        upper = rng.random((n, n)) < p
        adj = np.triu(upper, 1)
        adj = (adj | adj.T).astype(np.int64)
        np.fill_diagonal(adj, 0)
        if not require_connected or _connected(adj):
            return Graph(adj, node_features=np.ones((n, 1)))


def nodes_within_two(g: Graph) -> np.ndarray:
    """Per node, how many nodes (itself included) lie within shortest distance 2."""
    dist = shortest_distances(g)
    return ((dist >= 0) & (dist <= 2)).sum(axis=1).astype(np.float64)


def has_four_cycle(g: Graph) -> bool:
    """True when some pair of nodes has two or more common neighbors."""
    a = g.adjacency
    common = a @ a
    n = g.n
    for i in range(n):
        for j in range(i + 1, n):
            if common[i, j] >= 2:
                return True
    return False


def synth_node_task(n_graphs: int, seed: int, n_range: tuple = (5, 12),
                    p: float = 0.3, k_hist: int = 4) -> GraphDataset:
    """Connected random graphs; target = number of nodes within distance 2."""
    rng = np.random.default_rng([seed, 100])
    items = []
    for i in range(n_graphs):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        g = _random_graph(rng, n, p, require_connected=True)
        g.name = f"node-task-{i:04d}"
        targets = nodes_within_two(g)[:, None]
        items.append(LabeledGraph(g, route_histogram(g, k_hist), targets,
                                  np.ones_like(targets, dtype=bool)))
    return GraphDataset(items, "node", 1, k_hist)


def synth_graph_task(n_graphs: int, seed: int, n_range: tuple = (5, 12),
                     k_hist: int = 4) -> GraphDataset:
    """Random graphs labeled by whether they contain a 4-cycle."""
    rng = np.random.default_rng([seed, 200])
    items = []
    for i in range(n_graphs):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        p = float(rng.uniform(0.10, 0.35))
        g = _random_graph(rng, n, p, require_connected=False)
        g.name = f"graph-task-{i:04d}"
        label = np.array([1.0 if has_four_cycle(g) else 0.0])
        items.append(LabeledGraph(g, route_histogram(g, k_hist), label,
                                  np.ones_like(label, dtype=bool)))
    return GraphDataset(items, "graph", 1, k_hist)


# -- evaluation --------------------------------------------------------------------

def evaluate(model: RouteGraphNetwork, dataset: GraphDataset,
             batch_size: int = 16) -> dict:
    """MAE for node tasks; per-task mean AUC plus loss for graph tasks."""
    preds, targets, masks = [], [], []
    losses = []
    for start in range(0, len(dataset), batch_size):
        items = dataset.items[start:start + batch_size]
        labeled = make_batch(items, dataset.task, model.config.pool)
        h = model.forward(labeled.graphs, training=False)
        if dataset.task == "node":
            out = node_head(h, model)
            losses.append(float(masked_mae(out, labeled.targets, labeled.mask).item()))
            for i, it in enumerate(items):
                preds.append(out.data[i, :it.graph.n])
                targets.append(labeled.targets[i, :it.graph.n])
                masks.append(labeled.mask[i, :it.graph.n])
        else:
            out = graph_head(h, labeled.graphs, model)
            losses.append(float(masked_cross_entropy(out, labeled.targets, labeled.mask).item()))
            preds.append(out.data)
            targets.append(labeled.targets)
            masks.append(labeled.mask)
    pred = np.concatenate(preds)
    target = np.concatenate(targets)
    mask = np.concatenate(masks)
    result = {"loss": float(np.mean(losses))}
    if dataset.task == "node":
        err = np.abs(pred - target)[mask]
        result["mae"] = float(err.mean())
    else:
        aucs = []
        for t in range(dataset.n_tasks):
            m = mask[:, t]
            auc = auc_roc(pred[m, t], target[m, t])
            if auc is not None:
                aucs.append(auc)
        result["auc"] = float(np.mean(aucs)) if aucs else None
    return result


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("nan")
    best_params: dict = field(default_factory=dict)


def train(model: RouteGraphNetwork, train_set: GraphDataset,
          val_set: GraphDataset | None, config: TrainConfig) -> TrainResult:
    """Epoch loop with shuffled mini-batches, Adam, staged LR decay, and
    best-validation checkpoint selection.  The model ends up loaded with the
    best checkpoint."""
    params = model.parameters()
    state = adam_init(params, config.learning_rate)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    result = TrainResult()
    better = (lambda a, b: a < b) if config.metric == "mae" else (lambda a, b: a > b)

    for epoch in range(1, config.epochs + 1):
        if epoch in config.decay_epochs:
            state.learning_rate *= config.decay_factor
        order = shuffle_rng.permutation(len(train_set))
        epoch_losses = []
        for batch_id, start in enumerate(range(0, len(order), config.batch_size)):
            items = [train_set.items[i] for i in order[start:start + config.batch_size]]
            labeled = make_batch(items, train_set.task, model.config.pool)
            model.zero_grads()
            try:
                loss = batch_loss(model, labeled, train_set.task,
                                  training=True, rng=dropout_rng)
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_id}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_id}")
            epoch_losses.append(value)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adam_step(params, grads, state)

        entry = {"epoch": epoch, "lr": state.learning_rate,
                 "train_loss": float(np.mean(epoch_losses))}
        if val_set is not None:
            metrics = evaluate(model, val_set, config.batch_size)
            entry.update({f"val_{k}": v for k, v in metrics.items()})
            metric_value = metrics.get(config.metric)
            if metric_value is not None and (
                    not result.best_params or better(metric_value, result.best_metric)):
                result.best_metric = float(metric_value)
                result.best_epoch = epoch
                result.best_params = model.parameter_arrays()
        result.history.append(entry)

    if result.best_params:
        model.set_parameter_arrays(result.best_params)
    else:
        result.best_epoch = config.epochs
        result.best_params = model.parameter_arrays()
    return result


# -- dataset directories -----------------------------------------------------------

def save_dataset(directory, dataset: GraphDataset) -> None:
    """Write one JSON graph document per item plus a targets index."""
    directory = Path(directory)
    (directory / "graphs").mkdir(parents=True, exist_ok=True)
    index = {"task": dataset.task, "n_tasks": dataset.n_tasks,
             "k_hist": dataset.k_hist, "items": []}
    for i, it in enumerate(dataset.items):
        fname = f"{i:05d}.json"
        (directory / "graphs" / fname).write_text(json.dumps(graph_to_json(it.graph)))
        index["items"].append({
            "file": f"graphs/{fname}",
            "targets": it.targets.tolist(),
            "mask": it.mask.astype(int).tolist(),
        })
    (directory / "targets.json").write_text(json.dumps(index, sort_keys=True))


def load_dataset(directory) -> GraphDataset:
    directory = Path(directory)
    index = json.loads((directory / "targets.json").read_text())
    items = []
    for entry in index["items"]:
        g = load_graph_json(json.loads((directory / entry["file"]).read_text()))
        if g.node_features is None:
            g.node_features = np.ones((g.n, 1))
        targets = np.asarray(entry["targets"], dtype=np.float64)
        mask = np.asarray(entry["mask"], dtype=bool)
        items.append(LabeledGraph(g, route_histogram(g, index["k_hist"]), targets, mask))
    return GraphDataset(items, index["task"], index["n_tasks"], index["k_hist"])
