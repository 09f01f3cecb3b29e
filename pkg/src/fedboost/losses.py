"""Classification losses: gradients, Hessians, and base-margin mapping.

Binary tasks use logistic loss on a single margin per row; multiclass tasks
use softmax cross-entropy with one margin per class. Hessians are floored at
a small positive epsilon so leaf weights stay finite, and the multiclass
Hessian uses the 2*p*(1-p) convention of mainstream GBDT implementations
(twice the diagonal of the true softmax Hessian).
"""

from dataclasses import dataclass

import numpy as np

HESSIAN_FLOOR = 1e-16
MARGIN_CLAMP = 500.0
BASE_MARGIN_CLAMP = 10.0


@dataclass(frozen=True)
class LossFunction:
    kind: str  # "binary_logistic" | "multiclass_softmax"
    hessian_floor: float = HESSIAN_FLOOR

    def __post_init__(self):
        if self.kind not in ("binary_logistic", "multiclass_softmax"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.hessian_floor <= 0:
            raise ValueError("hessian_floor must be > 0")


def for_task(task: str) -> LossFunction:
    return LossFunction("binary_logistic" if task == "binary" else "multiclass_softmax")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -MARGIN_CLAMP, MARGIN_CLAMP)))


def softmax(margins: np.ndarray) -> np.ndarray:
    shifted = margins - margins.max(axis=1, keepdims=True)
    exp = np.exp(np.clip(shifted, -MARGIN_CLAMP, MARGIN_CLAMP))
    return exp / exp.sum(axis=1, keepdims=True)


def grad_hess(
    loss: LossFunction, margins: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row first and second derivatives of the loss w.r.t. the margin(s).

    Binary: margins shape (n,), g = p - y, h = max(p(1-p), floor).
    Multiclass: margins shape (n, k), g_k = p_k - [y == k],
    h_k = max(2 p_k (1 - p_k), floor).
    """
    labels = np.asarray(labels, dtype=np.int64)
    margins = np.asarray(margins, dtype=np.float64)
    if loss.kind == "binary_logistic":
        p = sigmoid(margins)
        grad = p - labels
        hess = np.maximum(p * (1.0 - p), loss.hessian_floor)
        return grad, hess
    p = softmax(margins)
    grad = p.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    hess = np.maximum(2.0 * p * (1.0 - p), loss.hessian_floor)
    return grad, hess


def log_loss_sum(loss: LossFunction, margins: np.ndarray, labels: np.ndarray) -> float:
    """Summed negative log-likelihood, computed in overflow-safe form."""
    labels = np.asarray(labels, dtype=np.int64)
    margins = np.asarray(margins, dtype=np.float64)
    if loss.kind == "binary_logistic":
        m = np.clip(margins, -MARGIN_CLAMP, MARGIN_CLAMP)
        # log(1 + e^m) - y*m, stable for both signs of m
        softplus = np.logaddexp(0.0, m)
        return float(np.sum(softplus - labels * m))
    shifted = margins - margins.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + margins.max(axis=1)
    return float(np.sum(logsumexp - margins[np.arange(len(labels)), labels]))


def null_model(party_sums: list[tuple]) -> float | np.ndarray:
    """Federation-average of the target labels: (sum Y_p) / (sum n_p).

    ``Y_p`` is a party's label sum; for multiclass parties it is the per-class
    count vector (the sum of one-hot labels), in which case the average is the
    class-frequency vector.
    """
    from .errors import EmptyFederationError

    if not party_sums:
        raise EmptyFederationError("no parties contributed target sums")
    total_count = sum(int(n) for _, n in party_sums)
    if total_count <= 0:
        raise EmptyFederationError("federation holds zero samples")
    first = np.asarray(party_sums[0][0], dtype=np.float64)
    total = np.zeros_like(first)
    for label_sum, _ in party_sums:
        total = total + np.asarray(label_sum, dtype=np.float64)
    mean = total / total_count
    return float(mean) if mean.ndim == 0 else mean


def base_margin(loss: LossFunction, label_mean) -> float | list[float]:
    """Map the null model's label mean into margin space for the loss.

    Binary: logit of the prevalence, clamped. Multiclass: log class
    frequencies, centered (softmax is shift-invariant, so centering changes
    nothing downstream but keeps the numbers small).
    """
    if loss.kind == "binary_logistic":
        p = min(max(float(label_mean), 1e-15), 1.0 - 1e-15)
        margin = np.log(p / (1.0 - p))
        return float(np.clip(margin, -BASE_MARGIN_CLAMP, BASE_MARGIN_CLAMP))
    freqs = np.asarray(label_mean, dtype=np.float64)
    logs = np.clip(np.log(np.maximum(freqs, 1e-15)), -BASE_MARGIN_CLAMP, BASE_MARGIN_CLAMP)
    return (logs - logs.mean()).tolist()
