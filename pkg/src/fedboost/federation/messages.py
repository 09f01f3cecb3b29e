"""The wire vocabulary between aggregator and parties.

Every message is one JSON document carrying a protocol version tag, a type
tag, the round index it belongs to, and the id of the party whose link it
travels on (the recipient for aggregator-to-party traffic, the sender for
replies). Only sketches, bucketed aggregates, and models ever appear in
payloads; raw feature values and per-row labels never cross the wire.
"""

import json
from dataclasses import dataclass, field, fields

from ..errors import ProtocolError

PROTOCOL_VERSION = "fedboost/1"
AGGREGATOR_ID = "aggregator"

_REGISTRY: dict[str, type] = {}


def _register(cls):
    _REGISTRY[cls.TYPE] = cls
    return cls


@dataclass(kw_only=True)
class FederationMessage:
    round: int = 0
    party_id: str = ""

    TYPE = "abstract"

    def payload(self) -> dict:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("round", "party_id")
        }


@_register
@dataclass(kw_only=True)
class Register(FederationMessage):
    """First message on a party's connection: announces its id."""

    TYPE = "register"


@_register
@dataclass(kw_only=True)
class QueryTargetSum(FederationMessage):
    TYPE = "query_target_sum"


@_register
@dataclass(kw_only=True)
class ReplyTargetSum(FederationMessage):
    """Per-party label sum (per-class counts for multiclass) and row count."""

    label_sum: float | list
    count: int
    num_class: int
    task: str

    TYPE = "reply_target_sum"


@_register
@dataclass(kw_only=True)
class QuerySketch(FederationMessage):
    relative_error: float

    TYPE = "query_sketch"


@_register
@dataclass(kw_only=True)
class ReplySketch(FederationMessage):
    sketches: list  # serialized per-feature sketch records

    TYPE = "reply_sketch"


@_register
@dataclass(kw_only=True)
class BroadcastCandidates(FederationMessage):
    candidates: list  # per-feature threshold lists

    TYPE = "broadcast_candidates"


@_register
@dataclass(kw_only=True)
class BroadcastModel(FederationMessage):
    """Current model plus the partial tree under construction.

    When ``open_node_ids`` is non-empty the receiving party must answer with
    gradient histograms for those nodes; an empty list is a pure model sync
    (the party still acknowledges with an empty histogram reply).
    """

    model: dict
    open_node_ids: list = field(default_factory=list)
    class_id: int = 0

    TYPE = "broadcast_model"


@_register
@dataclass(kw_only=True)
class ReplyGradHist(FederationMessage):
    histograms: dict  # str(node_id) -> histogram payload
    loss_sum: float | None = None
    row_count: int = 0

    TYPE = "reply_grad_hist"


@_register
@dataclass(kw_only=True)
class Terminate(FederationMessage):
    model: dict

    TYPE = "terminate"


@_register
@dataclass(kw_only=True)
class ErrorMessage(FederationMessage):
    code: str
    detail: str = ""

    TYPE = "error"


def encode(message: FederationMessage) -> bytes:
    document = {
        "protocol": PROTOCOL_VERSION,
        "type": message.TYPE,
        "round": message.round,
        "party_id": message.party_id,
        "payload": message.payload(),
    }
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode(data: bytes) -> FederationMessage:
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable federation message: {exc}") from exc
    if document.get("protocol") != PROTOCOL_VERSION:
        raise ProtocolError(
            f"protocol version mismatch: got {document.get('protocol')!r}, "
            f"expected {PROTOCOL_VERSION!r}"
        )
    message_type = document.get("type")
    cls = _REGISTRY.get(message_type)
    if cls is None:
        raise ProtocolError(f"unknown message type {message_type!r}")
    return cls(
        round=document.get("round", 0),
        party_id=document.get("party_id", ""),
        **document.get("payload", {}),
    )
