"""
Task decoders and losses: MLP node classifier, TransE and DistMult triple scorers
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from autograd import Tape, Var
from encoders import glorot
from errors import InvalidArgumentError, ParameterError, ShapeError
from rng import RngStream

SCORERS = ("transe", "distmult")


@dataclass
class ClassifierHead:
    """d -> d (relu) -> classes, with biases"""
    dim: int
    num_classes: int
    prefix: str = "clf"

    def names(self):
        return [f"{self.prefix}.{k}" for k in ("W1", "b1", "W2", "b2")]

    def init_params(self, rng: RngStream) -> Dict[str, np.ndarray]:
        w1, b1, w2, b2 = self.names()
        return {
            w1: glorot(rng, self.dim, self.dim),
            b1: np.zeros((1, self.dim)),
            w2: glorot(rng, self.dim, self.num_classes),
            b2: np.zeros((1, self.num_classes)),
        }

    def logits(self, tape: Tape, params: Dict[str, Var], H: Var, detach: bool = False) -> Var:
        if H.shape[1] != self.dim:
            raise ShapeError("classify", H.shape, (H.shape[0], self.dim))
        weights = []
        for name in self.names():
            if name not in params:
                raise ParameterError(f"classifier is missing parameter {name}")
            weights.append(tape.detach(params[name]) if detach else params[name])
        w1, b1, w2, b2 = weights
        rows = np.zeros(H.shape[0], dtype=np.int64)
        hidden = tape.relu(tape.add(tape.matmul(H, w1), tape.gather(b1, rows)))
        return tape.add(tape.matmul(hidden, w2), tape.gather(b2, rows))

    def probabilities(self, tape: Tape, params: Dict[str, Var], H: Var, detach: bool = False) -> Var:
        return tape.softmax(self.logits(tape, params, H, detach))


def classify(tape: Tape, H: Var, head: ClassifierHead, params: Dict[str, Var]) -> Var:
    """Class distribution per node; argmax is the predicted label"""
    return head.probabilities(tape, params, H)


def _check_kind(kind: str) -> None:
    if kind not in SCORERS:
        raise InvalidArgumentError(f"unknown scorer {kind!r}; expected one of {SCORERS}")


def score_triple(kind: str, h_u: np.ndarray, h_r: np.ndarray, h_v: np.ndarray) -> float:
    """f(u, r, v): TransE -||u + r - v||_2, DistMult Σ u_i r_i v_i"""
    _check_kind(kind)
    h_u, h_r, h_v = (np.asarray(x, dtype=np.float64).ravel() for x in (h_u, h_r, h_v))
    if not h_u.shape == h_r.shape == h_v.shape:
        raise ShapeError(f"score_triple:{kind}", h_u.shape, h_r.shape, h_v.shape)
    if kind == "transe":
        return float(-np.linalg.norm(h_u + h_r - h_v))
    return float(np.sum(h_u * h_r * h_v))


def score_batch(tape: Tape, kind: str, H: Var, R: Var, triples: np.ndarray) -> Var:
    """Scores of a batch of (u, r, v) rows as an m x 1 column on the tape"""
    _check_kind(kind)
    if H.shape[1] != R.shape[1]:
        raise ShapeError(f"score_batch:{kind}", H.shape, R.shape)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    hu = tape.gather(H, triples[:, 0])
    hr = tape.gather(R, triples[:, 1])
    hv = tape.gather(H, triples[:, 2])
    if kind == "transe":
        return tape.scale(tape.row_norm(tape.sub(tape.add(hu, hr), hv)), -1.0)
    return tape.row_sum(tape.mul(tape.mul(hu, hr), hv))


def score_candidates(kind: str, H: np.ndarray, R: np.ndarray, u: int, r: int, v: int,
                     direction: str) -> np.ndarray:
    """Scores of every entity substituted into the head or tail slot of (u, r, v)"""
    _check_kind(kind)
    if direction == "tail":
        left = H[u] + R[r] if kind == "transe" else H[u] * R[r]
        if kind == "transe":
            return -np.linalg.norm(left[None, :] - H, axis=1)
        return H @ left
    if direction == "head":
        if kind == "transe":
            return -np.linalg.norm(H + (R[r] - H[v])[None, :], axis=1)
        return H @ (R[r] * H[v])
    raise InvalidArgumentError(f"direction must be 'head' or 'tail', got {direction!r}")


def bce_loss(tape: Tape, scores: Var, labels: np.ndarray) -> Var:
    """Batch mean of -y log σ(f) - (1 - y) log(1 - σ(f)), as softplus(f·(1 - 2y))"""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if labels.shape != scores.shape:
        raise ShapeError("bce_loss", scores.shape, labels.shape)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise InvalidArgumentError("bce_loss labels must be 0 or 1")
    signed = tape.mul(scores, tape.constant(1.0 - 2.0 * labels))
    return tape.mean(tape.softplus(signed))


def ce_loss(tape: Tape, logits: Var, labels: np.ndarray, mask: np.ndarray) -> Var:
    """Mean negative log-probability of the true class over the masked nodes"""
    mask = np.asarray(mask, dtype=np.int64).ravel()
    if mask.size == 0:
        raise InvalidArgumentError("ce_loss mask is empty")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size != logits.shape[0]:
        raise ShapeError("ce_loss", logits.shape, labels.shape)
    one_hot = np.zeros(logits.shape)
    one_hot[np.arange(labels.size), labels] = 1.0
    picked = tape.row_sum(tape.mul(tape.log_softmax(logits), tape.constant(one_hot)))
    return tape.scale(tape.mean(tape.gather(picked, mask)), -1.0)
