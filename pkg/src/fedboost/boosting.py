"""Histogram-based gradient boosted trees: split search, growth, prediction.

Split finding works entirely on bucketed gradient/Hessian sums, so the same
tree builder serves both the centralized trainer (histograms computed in
process) and the federated aggregator (histograms merged from party replies);
the builder only ever sees a supplier callable. Buckets follow the value <=
threshold convention: bucket b of a feature holds the rows whose value is at
most that feature's b-th candidate threshold and above the previous one, and
the final bucket catches the remainder. Prediction applies the same <= test,
so binned routing during training and raw-value routing at inference agree
exactly.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetMatrix
from .losses import LossFunction, base_margin, for_task, grad_hess, log_loss_sum
from .sketch import FeatureSketchSet

MODEL_FORMAT = "fedboost-model/1"


@dataclass(frozen=True)
class Hyperparameters:
    """Training knobs; defaults mirror the reference experiment setup."""

    reg_lambda: float = 0.1
    gamma: float = 0.0
    eta: float = 0.1
    max_depth: int = 6
    max_bins: int = 255
    rounds: int = 100
    min_child_count: int = 1

    def __post_init__(self):
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_bins < 1:
            raise ValueError("max_bins must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.min_child_count < 1:
            raise ValueError("min_child_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "reg_lambda": self.reg_lambda,
            "gamma": self.gamma,
            "eta": self.eta,
            "max_depth": self.max_depth,
            "max_bins": self.max_bins,
            "rounds": self.rounds,
            "min_child_count": self.min_child_count,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "Hyperparameters":
        return cls(**{k: record[k] for k in cls().to_dict() if k in record})


# -- binning -----------------------------------------------------------------


def bin_features(features: np.ndarray, candidates: list[np.ndarray]) -> np.ndarray:
    """Bucket index per cell: searchsorted-left over candidate thresholds."""
    features = np.asarray(features, dtype=np.float64)
    binned = np.zeros(features.shape, dtype=np.int32)
    for j, thresholds in enumerate(candidates):
        if len(thresholds):
            binned[:, j] = np.searchsorted(thresholds, features[:, j], side="left")
    return binned


def bucket_counts(candidates: list[np.ndarray]) -> list[int]:
    return [len(c) + 1 for c in candidates]


def threshold_bucket(thresholds: np.ndarray, threshold: float) -> int:
    """Recover the bucket index of a split threshold drawn from candidates."""
    b = int(np.searchsorted(thresholds, threshold, side="left"))
    if b >= len(thresholds) or thresholds[b] != threshold:
        raise ValueError(f"threshold {threshold!r} is not a candidate boundary")
    return b


# -- gradient/Hessian histograms ----------------------------------------------


@dataclass
class GradHessHistogram:
    """Per-feature bucketed sums of gradients, Hessians, and row counts."""

    grad: list[np.ndarray]
    hess: list[np.ndarray]
    count: list[np.ndarray]

    def totals(self) -> tuple[float, float, int]:
        return (
            float(self.grad[0].sum()),
            float(self.hess[0].sum()),
            int(self.count[0].sum()),
        )

    def merge_from(self, other: "GradHessHistogram") -> None:
        for mine, theirs in zip(self.grad, other.grad):
            mine += theirs
        for mine, theirs in zip(self.hess, other.hess):
            mine += theirs
        for mine, theirs in zip(self.count, other.count):
            mine += theirs

    @classmethod
    def zeros(cls, n_buckets: list[int]) -> "GradHessHistogram":
        return cls(
            [np.zeros(nb, dtype=np.float64) for nb in n_buckets],
            [np.zeros(nb, dtype=np.float64) for nb in n_buckets],
            [np.zeros(nb, dtype=np.int64) for nb in n_buckets],
        )

    def to_payload(self) -> dict:
        """Sparse wire form: only occupied buckets per feature.

        A node usually touches far fewer buckets than exist (bucket count is
        fixed at the candidate grid, row count is not), so shipping
        (index, grad, hess, count) tuples keeps payloads proportional to the
        data instead of the grid.
        """
        features = []
        for g, h, c in zip(self.grad, self.hess, self.count):
            occupied = np.flatnonzero((c != 0) | (g != 0.0) | (h != 0.0))
            features.append(
                {
                    "size": len(c),
                    "idx": occupied.tolist(),
                    "grad": g[occupied].tolist(),
                    "hess": h[occupied].tolist(),
                    "count": c[occupied].tolist(),
                }
            )
        return {"features": features}

    @classmethod
    def from_payload(cls, payload: dict) -> "GradHessHistogram":
        grads, hesses, counts = [], [], []
        for feature in payload["features"]:
            g = np.zeros(feature["size"], dtype=np.float64)
            h = np.zeros(feature["size"], dtype=np.float64)
            c = np.zeros(feature["size"], dtype=np.int64)
            idx = np.asarray(feature["idx"], dtype=np.int64)
            if len(idx):
                g[idx] = feature["grad"]
                h[idx] = feature["hess"]
                c[idx] = feature["count"]
            grads.append(g)
            hesses.append(h)
            counts.append(c)
        return cls(grads, hesses, counts)


def build_histograms(
    binned: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    assignment: np.ndarray,
    request_ids: list[int],
    n_buckets: list[int],
) -> dict[int, GradHessHistogram]:
    """Bucketed (g, h, count) sums for each requested node, all features."""
    if not request_ids:
        return {}
    # A slice may hold no rows at some requested node, so size the lookup
    # by both the assignment range and the requested ids.
    table_size = max(int(assignment.max(initial=0)), max(request_ids)) + 1
    position = np.full(table_size, -1, dtype=np.int64)
    for pos, node_id in enumerate(request_ids):
        position[node_id] = pos
    row_pos = position[assignment]
    active = np.flatnonzero(row_pos >= 0)
    row_pos = row_pos[active]
    n_nodes = len(request_ids)
    hists = {nid: GradHessHistogram([], [], []) for nid in request_ids}
    active_grad = grad[active]
    active_hess = hess[active]
    for j, nb in enumerate(n_buckets):
        flat = row_pos * nb + binned[active, j]
        size = n_nodes * nb
        g = np.bincount(flat, weights=active_grad, minlength=size).reshape(n_nodes, nb)
        h = np.bincount(flat, weights=active_hess, minlength=size).reshape(n_nodes, nb)
        c = np.bincount(flat, minlength=size).reshape(n_nodes, nb)
        for pos, nid in enumerate(request_ids):
            hist = hists[nid]
            hist.grad.append(g[pos])
            hist.hess.append(h[pos])
            hist.count.append(c[pos].astype(np.int64))
    return hists


# -- split math ---------------------------------------------------------------


def leaf_weight(grad_sum: float, hess_sum: float, params: Hyperparameters) -> float:
    denom = hess_sum + params.reg_lambda
    if denom <= 0.0:
        return 0.0
    return float(-grad_sum / denom)


def split_gain(
    gl: float, hl: float, gr: float, hr: float, params: Hyperparameters
) -> float:
    lam = params.reg_lambda
    return float(
        0.5
        * (
            _score(gl, hl, lam)
            + _score(gr, hr, lam)
            - _score(gl + gr, hl + hr, lam)
        )
        - params.gamma
    )


def _score(g, h, lam):
    denom = np.asarray(h, dtype=np.float64) + lam
    safe = np.where(denom > 0.0, denom, 1.0)
    return np.where(denom > 0.0, np.square(g) / safe, 0.0)


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    bucket: int
    threshold: float
    gain: float
    left_grad: float
    left_hess: float
    left_count: int
    right_grad: float
    right_hess: float
    right_count: int


def find_best_split(
    hist: GradHessHistogram,
    candidates: list[np.ndarray],
    params: Hyperparameters,
) -> SplitDecision | None:
    """Best positive-gain split over all features and bucket boundaries.

    Prefix-scans each feature's buckets left to right; ties break toward the
    lowest feature index, then the lowest bucket index. Returns None when no
    boundary improves on the unsplit node.
    """
    g_total, h_total, _ = hist.totals()
    lam = params.reg_lambda
    parent = _score(g_total, h_total, lam)
    best: SplitDecision | None = None
    best_gain = 0.0
    for feature, thresholds in enumerate(candidates):
        g = hist.grad[feature]
        if len(g) <= 1:
            continue
        gl = np.cumsum(g)[:-1]
        hl = np.cumsum(hist.hess[feature])[:-1]
        nl = np.cumsum(hist.count[feature])[:-1]
        gr = g_total - gl
        hr = h_total - hl
        gains = 0.5 * (_score(gl, hl, lam) + _score(gr, hr, lam) - parent) - params.gamma
        bucket = int(np.argmax(gains))
        gain = float(gains[bucket])
        if gain > best_gain:
            best_gain = gain
            total_count = int(hist.count[feature].sum())
            best = SplitDecision(
                feature=feature,
                bucket=bucket,
                threshold=float(thresholds[bucket]),
                gain=gain,
                left_grad=float(gl[bucket]),
                left_hess=float(hl[bucket]),
                left_count=int(nl[bucket]),
                right_grad=float(gr[bucket]),
                right_hess=float(hr[bucket]),
                right_count=total_count - int(nl[bucket]),
            )
    return best


# -- tree growth ---------------------------------------------------------------


@dataclass
class _NodeMeta:
    depth: int
    grad: float | None = None
    hess: float | None = None
    count: int | None = None


def grow_tree(
    histogram_supplier,
    candidates: list[np.ndarray],
    params: Hyperparameters,
    class_id: int = 0,
) -> dict:
    """Grow one tree breadth-first, one histogram request per depth level.

    ``histogram_supplier(nodes, request_ids)`` must return a histogram for
    every requested open node of the partial tree; in the federated setting
    each call is one protocol sub-round.
    """
    nodes: list[dict] = [{"type": "open"}]
    meta = {0: _NodeMeta(depth=1)}
    frontier = [0]
    while frontier:
        request = []
        for nid in frontier:
            m = meta[nid]
            if m.count is None:
                request.append(nid)  # root: totals must come from its histogram
            elif m.depth < params.max_depth and m.count >= params.min_child_count:
                request.append(nid)
        hists = histogram_supplier(nodes, request) if request else {}
        next_frontier: list[int] = []
        for nid in frontier:
            m = meta[nid]
            hist = hists.get(nid)
            if hist is not None and m.count is None:
                m.grad, m.hess, m.count = hist.totals()
            decision = None
            if (
                hist is not None
                and m.depth < params.max_depth
                and m.count >= params.min_child_count
            ):
                decision = find_best_split(hist, candidates, params)
            if decision is None:
                nodes[nid] = {
                    "type": "leaf",
                    "weight": leaf_weight(m.grad, m.hess, params),
                }
                continue
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes.append({"type": "open"})
            nodes.append({"type": "open"})
            nodes[nid] = {
                "type": "split",
                "feature": decision.feature,
                "threshold": decision.threshold,
                "default": "left" if decision.left_hess >= decision.right_hess else "right",
                "left": left_id,
                "right": right_id,
            }
            meta[left_id] = _NodeMeta(
                depth=m.depth + 1,
                grad=decision.left_grad,
                hess=decision.left_hess,
                count=decision.left_count,
            )
            meta[right_id] = _NodeMeta(
                depth=m.depth + 1,
                grad=decision.right_grad,
                hess=decision.right_hess,
                count=decision.right_count,
            )
            next_frontier.extend([left_id, right_id])
        frontier = next_frontier
    return {"class_id": class_id, "nodes": nodes}


# -- routing -------------------------------------------------------------------


def route_rows_binned(
    nodes: list[dict], binned: np.ndarray, candidates: list[np.ndarray]
) -> np.ndarray:
    """Node id where each row rests (a leaf or an open node of a partial tree)."""
    assignment = np.zeros(binned.shape[0], dtype=np.int64)
    for nid, node in enumerate(nodes):
        if node["type"] != "split":
            continue
        rows = np.flatnonzero(assignment == nid)
        if not len(rows):
            continue
        bucket = threshold_bucket(candidates[node["feature"]], node["threshold"])
        go_left = binned[rows, node["feature"]] <= bucket
        assignment[rows] = np.where(go_left, node["left"], node["right"])
    return assignment


def route_rows_raw(nodes: list[dict], features: np.ndarray) -> np.ndarray:
    """Like route_rows_binned but on raw values; NaN follows the default side."""
    assignment = np.zeros(features.shape[0], dtype=np.int64)
    for nid, node in enumerate(nodes):
        if node["type"] != "split":
            continue
        rows = np.flatnonzero(assignment == nid)
        if not len(rows):
            continue
        values = features[rows, node["feature"]]
        go_left = np.where(
            np.isnan(values), node["default"] == "left", values <= node["threshold"]
        )
        assignment[rows] = np.where(go_left, node["left"], node["right"])
    return assignment


def _leaf_values(nodes: list[dict]) -> np.ndarray:
    values = np.zeros(len(nodes), dtype=np.float64)
    for nid, node in enumerate(nodes):
        if node["type"] == "leaf":
            values[nid] = node["weight"]
    return values


def tree_values_binned(tree, binned, candidates) -> np.ndarray:
    return _leaf_values(tree["nodes"])[route_rows_binned(tree["nodes"], binned, candidates)]


def tree_values_raw(tree, features) -> np.ndarray:
    return _leaf_values(tree["nodes"])[route_rows_raw(tree["nodes"], features)]


# -- the additive model ----------------------------------------------------------


@dataclass
class TreeModel:
    """Additive ensemble: base margin plus eta-scaled tree outputs."""

    task: str
    num_class: int
    base_score: float | list[float]
    base_margin_value: float | list[float]
    eta: float
    trees: list[dict] = field(default_factory=list)

    @property
    def margin_width(self) -> int:
        return 1 if self.task == "binary" else self.num_class

    def init_margins(self, n_rows: int) -> np.ndarray:
        if self.task == "binary":
            return np.full(n_rows, float(self.base_margin_value), dtype=np.float64)
        return np.tile(np.asarray(self.base_margin_value, dtype=np.float64), (n_rows, 1))

    def predict_margin(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        margins = self.init_margins(features.shape[0])
        for tree in self.trees:
            values = self.eta * tree_values_raw(tree, features)
            if self.task == "binary":
                margins += values
            else:
                margins[:, tree["class_id"]] += values
        return margins

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "task": self.task,
            "num_class": self.num_class,
            "base_score": self.base_score,
            "base_margin": self.base_margin_value,
            "eta": self.eta,
            "trees": self.trees,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "TreeModel":
        if record.get("format") != MODEL_FORMAT:
            raise ValueError(f"unknown model format tag {record.get('format')!r}")
        return cls(
            task=record["task"],
            num_class=record["num_class"],
            base_score=record["base_score"],
            base_margin_value=record["base_margin"],
            eta=record["eta"],
            trees=record["trees"],
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, payload: str) -> "TreeModel":
        return cls.from_dict(json.loads(payload))


def label_mean(labels: np.ndarray, num_class: int, task: str):
    """The null model's statistic: prevalence (binary) or class frequencies."""
    labels = np.asarray(labels, dtype=np.int64)
    if task == "binary":
        return float(labels.mean())
    return (np.bincount(labels, minlength=num_class) / len(labels)).tolist()


def new_model(task: str, num_class: int, mean, eta: float, loss: LossFunction) -> TreeModel:
    return TreeModel(
        task=task,
        num_class=num_class,
        base_score=mean,
        base_margin_value=base_margin(loss, mean),
        eta=eta,
    )


def apply_tree_to_margins(margins, tree, binned, candidates, eta, task) -> None:
    values = eta * tree_values_binned(tree, binned, candidates)
    if task == "binary":
        margins += values
    else:
        margins[:, tree["class_id"]] += values


# -- centralized trainer -----------------------------------------------------------


def extract_candidates(sketches: FeatureSketchSet, max_bins: int) -> list[np.ndarray]:
    return [np.asarray(c, dtype=np.float64) for c in sketches.split_candidates(max_bins)]


def train_centralized(
    train: DatasetMatrix,
    params: Hyperparameters,
    relative_error: float = 0.01,
) -> tuple[TreeModel, list[dict]]:
    """Train on one in-process dataset through the same histogram machinery
    the federation uses; returns the model and a per-round loss log."""
    loss = for_task(train.task)
    sketches = FeatureSketchSet.from_matrix(train.features, relative_error)
    candidates = extract_candidates(sketches, params.max_bins)
    binned = bin_features(train.features, candidates)
    n_buckets = bucket_counts(candidates)

    mean = label_mean(train.labels, train.num_class, train.task)
    model = new_model(train.task, train.num_class, mean, params.eta, loss)
    margins = model.init_margins(train.n_rows)

    history = []
    started = time.perf_counter()
    for round_index in range(params.rounds):
        grad, hess = grad_hess(loss, margins, train.labels)
        history.append(
            {
                "round": round_index,
                "train_loss": log_loss_sum(loss, margins, train.labels) / train.n_rows,
                "seconds": time.perf_counter() - started,
            }
        )
        round_trees = []
        for class_id in range(model.margin_width):
            g = grad if model.margin_width == 1 else grad[:, class_id]
            h = hess if model.margin_width == 1 else hess[:, class_id]

            def supplier(nodes, request_ids, g=g, h=h):
                assignment = route_rows_binned(nodes, binned, candidates)
                return build_histograms(binned, g, h, assignment, request_ids, n_buckets)

            tree = grow_tree(supplier, candidates, params, class_id=class_id)
            round_trees.append(tree)
        for tree in round_trees:
            model.trees.append(tree)
            apply_tree_to_margins(margins, tree, binned, candidates, params.eta, train.task)
    history.append(
        {
            "round": params.rounds,
            "train_loss": log_loss_sum(loss, margins, train.labels) / train.n_rows,
            "seconds": time.perf_counter() - started,
        }
    )
    return model, history
