"""Aggregator-side protocol driver: Algorithm realization over channels.

The flow is target-sum collection (null model), sketch collection and merge
(surrogate representation plus split candidates), then one boosting round per
tree: each tree depth level is a sub-round in which the aggregator broadcasts
the partial tree with its open nodes, collects bucketed gradient/Hessian
histograms from every registered party (full quorum, no partial fusion), and
merges them element-wise in ascending party-id order so floating-point sums
stay reproducible. Round indices: 0 for setup, 1..T for boosting rounds,
T+1 for the final model sync before termination.
"""

import logging
import time

from ..boosting import (
    GradHessHistogram,
    Hyperparameters,
    TreeModel,
    extract_candidates,
    grow_tree,
    new_model,
)
from ..errors import ProtocolError, SchemaError
from ..losses import for_task, null_model
from ..sketch import FeatureSketchSet
from .messages import (
    BroadcastCandidates,
    BroadcastModel,
    ErrorMessage,
    QuerySketch,
    QueryTargetSum,
    ReplyGradHist,
    ReplySketch,
    ReplyTargetSum,
    Terminate,
)

logger = logging.getLogger(__name__)


class Aggregator:
    def __init__(
        self,
        transport,
        params: Hyperparameters,
        relative_error: float = 0.01,
        timeout: float = 60.0,
    ):
        # Ascending party-id order fixes the merge order for reproducibility.
        self.channels = dict(sorted(transport.channels.items()))
        if not self.channels:
            raise ProtocolError("no parties registered")
        self.params = params
        self.relative_error = relative_error
        self.timeout = timeout
        self.task: str | None = None
        self.num_class: int | None = None
        self.model: TreeModel | None = None
        self.candidates = None
        self.history: list[dict] = []
        self._started = time.perf_counter()

    # -- message plumbing -------------------------------------------------------

    def _broadcast(self, build_message) -> None:
        for party_id, channel in self.channels.items():
            channel.send(build_message(party_id))

    def _collect(self, expected_round: int, expected_type: type) -> dict:
        replies = {}
        for party_id, channel in self.channels.items():
            reply = channel.receive(expected_round, timeout=self.timeout)
            if isinstance(reply, ErrorMessage):
                raise ProtocolError(
                    f"party {party_id} reported {reply.code}: {reply.detail}"
                )
            if not isinstance(reply, expected_type):
                raise ProtocolError(
                    f"party {party_id} replied with {reply.TYPE!r}, "
                    f"expected {expected_type.TYPE!r}"
                )
            if reply.party_id != party_id:
                raise ProtocolError(
                    f"reply on {party_id}'s channel claims to be from "
                    f"{reply.party_id!r}"
                )
            replies[party_id] = reply
        return replies

    def _exchange(self, build_message, expected_round: int, expected_type: type) -> dict:
        self._broadcast(build_message)
        return self._collect(expected_round, expected_type)

    # -- protocol phases -----------------------------------------------------------

    def collect_target_sums(self) -> float | list:
        """Gather (label_sum, count) from all parties and set the null model."""
        replies = self._exchange(
            lambda pid: QueryTargetSum(round=0, party_id=pid), 0, ReplyTargetSum
        )
        tasks = {r.task for r in replies.values()}
        classes = {r.num_class for r in replies.values()}
        if len(tasks) > 1 or len(classes) > 1:
            raise SchemaError(
                f"parties disagree on the label schema: tasks={sorted(tasks)}, "
                f"num_class={sorted(classes)}"
            )
        self.task = tasks.pop()
        self.num_class = classes.pop()
        mean = null_model([(r.label_sum, r.count) for r in replies.values()])
        mean = mean if isinstance(mean, float) else mean.tolist()
        self.model = new_model(
            self.task, self.num_class, mean, self.params.eta, for_task(self.task)
        )
        return mean

    def build_surrogate(self) -> list:
        """Collect per-party sketches, merge them, broadcast split candidates."""
        replies = self._exchange(
            lambda pid: QuerySketch(
                round=0, party_id=pid, relative_error=self.relative_error
            ),
            0,
            ReplySketch,
        )
        merged: FeatureSketchSet | None = None
        n_features = None
        for party_id, reply in replies.items():
            sketches = FeatureSketchSet.from_dicts(reply.sketches)
            for sketch in sketches.sketches:
                if sketch.relative_error != self.relative_error:
                    raise ProtocolError(
                        f"party {party_id} sent sketches with relative error "
                        f"{sketch.relative_error}, expected {self.relative_error}"
                    )
            if n_features is None:
                n_features = sketches.num_features
            elif sketches.num_features != n_features:
                raise SchemaError(
                    f"party {party_id} holds {sketches.num_features} features, "
                    f"others hold {n_features}"
                )
            if merged is None:
                merged = sketches
            else:
                merged.merge_from(sketches)
        self.candidates = extract_candidates(merged, self.params.max_bins)
        payload = [c.tolist() for c in self.candidates]
        self._broadcast(
            lambda pid: BroadcastCandidates(round=0, party_id=pid, candidates=payload)
        )
        return self.candidates

    def _partial_model_dict(self, partial_tree: dict | None) -> dict:
        document = self.model.to_dict()
        if partial_tree is not None:
            document = dict(document)
            document["trees"] = list(document["trees"]) + [partial_tree]
        return document

    def _make_supplier(self, round_index: int, class_id: int):
        def supplier(nodes, request_ids):
            partial_tree = {"class_id": class_id, "nodes": nodes}
            model_doc = self._partial_model_dict(partial_tree)
            replies = self._exchange(
                lambda pid: BroadcastModel(
                    round=round_index,
                    party_id=pid,
                    model=model_doc,
                    open_node_ids=list(request_ids),
                    class_id=class_id,
                ),
                round_index,
                ReplyGradHist,
            )
            self._record_loss(round_index, replies)
            merged = {}
            for node_id in request_ids:
                combined: GradHessHistogram | None = None
                for party_id, reply in replies.items():
                    payload = reply.histograms.get(str(node_id))
                    if payload is None:
                        raise ProtocolError(
                            f"party {party_id} omitted node {node_id} from its reply"
                        )
                    part = GradHessHistogram.from_payload(payload)
                    if combined is None:
                        combined = part
                    else:
                        combined.merge_from(part)
                merged[node_id] = combined
            return merged

        return supplier

    def _record_loss(self, round_index: int, replies: dict) -> None:
        sums = [r.loss_sum for r in replies.values()]
        if any(s is None for s in sums):
            if not all(s is None for s in sums):
                raise ProtocolError("parties disagree on round-start loss reporting")
            return
        rows = sum(r.row_count for r in replies.values())
        entry = {
            "round": round_index - 1,
            "train_loss": sum(sums) / rows,
            "seconds": time.perf_counter() - self._started,
        }
        self.history.append(entry)
        logger.info(
            "round %d: train loss %.6f (%.1fs)",
            entry["round"], entry["train_loss"], entry["seconds"],
        )

    def run_round(self, round_index: int) -> None:
        """Grow this round's tree (one per class) from merged histograms."""
        for class_id in range(self.model.margin_width):
            tree = grow_tree(
                self._make_supplier(round_index, class_id),
                self.candidates,
                self.params,
                class_id=class_id,
            )
            self.model.trees.append(tree)

    def finalize(self) -> None:
        """Final model sync (collects the closing loss entry) and terminate."""
        final_round = self.params.rounds + 1
        replies = self._exchange(
            lambda pid: BroadcastModel(
                round=final_round,
                party_id=pid,
                model=self.model.to_dict(),
                open_node_ids=[],
                class_id=0,
            ),
            final_round,
            ReplyGradHist,
        )
        self._record_loss(final_round, replies)
        self._broadcast(
            lambda pid: Terminate(
                round=final_round, party_id=pid, model=self.model.to_dict()
            )
        )

    def run(self) -> TreeModel:
        self.collect_target_sums()
        self.build_surrogate()
        for round_index in range(1, self.params.rounds + 1):
            self.run_round(round_index)
        self.finalize()
        return self.model
