"""Party-side state machine: answers every aggregator query from local rows.

A party keeps its raw slice, the candidate thresholds it was sent, a binned
copy of its features, and a margin cache. Margins advance only at round
boundaries: the first message of a new round applies every finished tree the
party has not folded in yet and refreshes the gradient/Hessian cache, so all
trees grown within one round see the same round-start derivatives, matching
standard multiclass boosting semantics.
"""

import json

import numpy as np

from ..boosting import (
    TreeModel,
    apply_tree_to_margins,
    bin_features,
    bucket_counts,
    build_histograms,
    route_rows_binned,
)
from ..data import DatasetMatrix
from ..errors import ProtocolError, SchemaError
from ..losses import for_task, grad_hess, log_loss_sum
from ..sketch import FeatureSketchSet
from .messages import (
    BroadcastCandidates,
    BroadcastModel,
    ErrorMessage,
    FederationMessage,
    QuerySketch,
    QueryTargetSum,
    ReplyGradHist,
    ReplySketch,
    ReplyTargetSum,
    Terminate,
)


class Party:
    def __init__(self, party_id: str, data: DatasetMatrix):
        self.party_id = party_id
        self.data = data
        self.loss = for_task(data.task)
        self._candidates: list[np.ndarray] | None = None
        self._binned: np.ndarray | None = None
        self._n_buckets: list[int] | None = None
        self._margins: np.ndarray | None = None
        self._grad: np.ndarray | None = None
        self._hess: np.ndarray | None = None
        self._gh_round: int | None = None
        self._applied_trees = 0
        self._model_doc: dict | None = None
        self.final_model: dict | None = None
        self.last_error: ErrorMessage | None = None

    @property
    def model_json(self) -> str | None:
        """Canonical serialization of the model copy from the last broadcast."""
        if self._model_doc is None:
            return None
        return json.dumps(self._model_doc, sort_keys=True, separators=(",", ":"))

    # -- dispatch -------------------------------------------------------------

    def handle(self, message: FederationMessage) -> FederationMessage | None:
        if isinstance(message, QueryTargetSum):
            return self._on_target_sum(message)
        if isinstance(message, QuerySketch):
            return self._on_sketch(message)
        if isinstance(message, BroadcastCandidates):
            self._on_candidates(message)
            return None
        if isinstance(message, BroadcastModel):
            return self._on_model(message)
        if isinstance(message, Terminate):
            self.final_model = message.model
            return None
        if isinstance(message, ErrorMessage):
            self.last_error = message
            return None
        raise ProtocolError(f"party cannot handle message type {message.TYPE!r}")

    # -- handlers ---------------------------------------------------------------

    def _on_target_sum(self, message: QueryTargetSum) -> ReplyTargetSum:
        labels = self.data.labels
        if self.data.task == "binary":
            label_sum: float | list = float(labels.sum())
        else:
            label_sum = np.bincount(labels, minlength=self.data.num_class).tolist()
        return ReplyTargetSum(
            round=message.round,
            party_id=self.party_id,
            label_sum=label_sum,
            count=self.data.n_rows,
            num_class=self.data.num_class,
            task=self.data.task,
        )

    def _on_sketch(self, message: QuerySketch) -> ReplySketch:
        sketches = FeatureSketchSet.from_matrix(
            self.data.features, message.relative_error
        )
        return ReplySketch(
            round=message.round, party_id=self.party_id, sketches=sketches.to_dicts()
        )

    def _on_candidates(self, message: BroadcastCandidates) -> None:
        if len(message.candidates) != self.data.n_features:
            raise SchemaError(
                f"party {self.party_id}: got candidates for "
                f"{len(message.candidates)} features but holds {self.data.n_features}"
            )
        self._candidates = [np.asarray(c, dtype=np.float64) for c in message.candidates]
        self._binned = bin_features(self.data.features, self._candidates)
        self._n_buckets = bucket_counts(self._candidates)

    def _on_model(self, message: BroadcastModel) -> ReplyGradHist:
        if self._candidates is None:
            raise ProtocolError(
                f"party {self.party_id} received a model before candidates"
            )
        model = TreeModel.from_dict(message.model)
        self._model_doc = message.model
        if self._margins is None:
            self._margins = model.init_margins(self.data.n_rows)

        trees = model.trees
        partial = trees[-1] if trees and _has_open_nodes(trees[-1]) else None
        completed = trees[:-1] if partial is not None else trees

        loss_sum = None
        if message.round != self._gh_round:
            for tree in completed[self._applied_trees :]:
                apply_tree_to_margins(
                    self._margins, tree, self._binned, self._candidates,
                    model.eta, self.data.task,
                )
            self._applied_trees = len(completed)
            self._grad, self._hess = grad_hess(self.loss, self._margins, self.data.labels)
            self._gh_round = message.round
            loss_sum = log_loss_sum(self.loss, self._margins, self.data.labels)

        histograms = {}
        if message.open_node_ids:
            if partial is None:
                raise ProtocolError("open node ids given but the last tree is closed")
            if self._grad.ndim == 1:
                grad, hess = self._grad, self._hess
            else:
                grad = self._grad[:, message.class_id]
                hess = self._hess[:, message.class_id]
            assignment = route_rows_binned(partial["nodes"], self._binned, self._candidates)
            hists = build_histograms(
                self._binned, grad, hess, assignment,
                list(message.open_node_ids), self._n_buckets,
            )
            histograms = {str(nid): hist.to_payload() for nid, hist in hists.items()}
        return ReplyGradHist(
            round=message.round,
            party_id=self.party_id,
            histograms=histograms,
            loss_sum=loss_sum,
            row_count=self.data.n_rows,
        )


def _has_open_nodes(tree: dict) -> bool:
    return any(node["type"] == "open" for node in tree["nodes"])
