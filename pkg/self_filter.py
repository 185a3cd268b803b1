"""
Self-filter module: scores intermediate node representations with the task decoder and
turns the scores into per-node binary gates
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from autograd import Tape, Var, gumbel_softmax
from decoders import ClassifierHead, score_batch
from errors import GateTraceError, InvalidArgumentError, ShapeError
from graph_builder import KnowledgeGraph
from rng import RngStream

logger = logging.getLogger(__name__)

EVAL_POLICIES = ("deterministic", "sampled")
QUALITY_MODES = ("sigmoid", "raw")

# Quality of an entity with no train triples
NEUTRAL_QUALITY = {"sigmoid": 0.5, "raw": 0.0}

# Initial w^(l): probabilities lie in (0, 1], raw scores start near 0 and need a steeper gate
DEFAULT_GATE_WEIGHT = 1.0
RAW_GATE_WEIGHT = 5.0


def resolve_quality_mode(mode: str, link_prediction: bool, decoder: str) -> str:
    """Turn the `auto` setting into a concrete KG quality mode

    DistMult scores are signed, so the raw mean keeps the sign the eval gate tests. TransE
    scores are never positive and go through the sigmoid. Node classification ignores the mode.
    """
    if mode != "auto":
        return mode
    if link_prediction and decoder == "distmult":
        return "raw"
    return "sigmoid"


@dataclass
class GateParams:
    """Non-learned gate settings; the per-layer scalars w^(l) live in the parameter registry"""
    layers: int
    tau: float = 1.0
    eval_policy: str = "deterministic"
    detach_quality: bool = False
    quality_mode: str = "sigmoid"
    true_class_on_train: bool = False
    cap: int = 32
    hard: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError(f"tau must be > 0, got {self.tau}")
        if self.eval_policy not in EVAL_POLICIES:
            raise InvalidArgumentError(f"eval_policy must be one of {EVAL_POLICIES}")
        if self.quality_mode not in QUALITY_MODES:
            raise InvalidArgumentError(f"quality_mode must be one of {QUALITY_MODES}")
        if self.cap < 1:
            raise InvalidArgumentError("cap must be >= 1")

    @staticmethod
    def weight_name(layer: int) -> str:
        return f"gate.w{layer}"


def quality_nc(tape: Tape, H: Var, head: ClassifierHead, params: Dict[str, Var],
               detach: bool = False, labels: Optional[np.ndarray] = None,
               train_nodes: Optional[np.ndarray] = None) -> Var:
    """Max softmax probability of the classifier on each row of H (n x 1)

    When `labels` and `train_nodes` are given, train nodes use the probability of their
    true class instead.
    """
    if H.shape[1] != head.dim:
        raise ShapeError("quality_nc", H.shape, (H.shape[0], head.dim))
    probs = head.probabilities(tape, params, H, detach=detach)
    chosen = np.argmax(probs.value, axis=1)
    if labels is not None and train_nodes is not None:
        chosen = chosen.copy()
        chosen[train_nodes] = labels[train_nodes]
    pick = np.zeros(probs.shape)
    pick[np.arange(probs.shape[0]), chosen] = 1.0
    return tape.row_sum(tape.mul(probs, tape.constant(pick)))


@dataclass
class RelatedSample:
    """Flattened (entity, train triple row) pairs used by one quality evaluation"""
    entity: np.ndarray
    rows: np.ndarray
    counts: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0


def sample_related(kg: KnowledgeGraph, cap: int, rng: Optional[RngStream]) -> RelatedSample:
    """Up to `cap` triples of E_x per entity, drawn without replacement in entity-id order"""
    entity_parts, row_parts = [], []
    counts = np.zeros(kg.num_entities, dtype=np.int64)
    for x in range(kg.num_entities):
        rows = kg.related_triples(x)
        if rows.size > cap:
            if rng is None:
                raise InvalidArgumentError("sampling E_x below its size needs an rng")
            rows = np.sort(rng.choice(rows, cap, replace=False))
        counts[x] = rows.size
        entity_parts.append(np.full(rows.size, x, dtype=np.int64))
        row_parts.append(rows)
    return RelatedSample(np.concatenate(entity_parts), np.concatenate(row_parts), counts)


def needs_sampling(kg: KnowledgeGraph, cap: int) -> bool:
    sizes = np.diff(kg.related_ptr)
    return bool(sizes.size and sizes.max() > cap)


def quality_kg(tape: Tape, H: Var, R: Var, kg: KnowledgeGraph, decoder: str,
               sample: RelatedSample, mode: str = "sigmoid") -> Var:
    """Mean decoder confidence over each entity's sampled train triples (n x 1)"""
    n = kg.num_entities
    neutral = np.where(sample.empty, NEUTRAL_QUALITY[mode], 0.0).reshape(-1, 1)
    if sample.rows.size == 0:
        return tape.constant(neutral)
    scores = score_batch(tape, decoder, H, R, kg.train[sample.rows])
    if mode == "sigmoid":
        scores = tape.sigmoid(scores)
    weights = 1.0 / sample.counts[sample.entity]
    weighted = tape.mul(scores, tape.constant(weights.reshape(-1, 1)))
    total = tape.segment_sum(weighted, sample.entity, n)
    return tape.add(total, tape.constant(neutral))


def gate(tape: Tape, qual: Var, w: Var, params: GateParams, mode: str,
         rng: Optional[RngStream], tau: Optional[float] = None) -> Var:
    """Binary gate column (n x 1) from logits (w·qual, 0); category 0 means keep

    Train mode draws a hard straight-through Gumbel-softmax sample, or the relaxed keep
    probability when `params.hard` is off. Eval mode is
    g = 1 iff w·qual >= 0 under the deterministic policy, or a hard sample with no
    gradient under the sampled policy.
    """
    tau = params.tau if tau is None else tau
    if not tau > 0:
        raise InvalidArgumentError(f"tau must be > 0, got {tau}")
    if w.shape != (1, 1):
        raise ShapeError("gate", w.shape, (1, 1))
    score = tape.mul(qual, w)
    if mode == "eval" and params.eval_policy == "deterministic":
        return tape.constant((score.value >= 0).astype(np.float64))

    logits = tape.matmul(score, tape.constant(np.array([[1.0, 0.0]])))
    if mode == "eval":
        logits = tape.detach(logits)
    elif mode != "train":
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    sample = gumbel_softmax(tape, logits, tau, hard=params.hard or mode == "eval", rng=rng)
    return tape.matmul(sample, tape.constant(np.array([[1.0], [0.0]])))


@dataclass
class GateTrace:
    """Per-layer, per-node gate bits; totals count how often a node passed the gate"""
    bits: List[np.ndarray] = field(default_factory=list)

    def record(self, gates: np.ndarray) -> None:
        gates = np.asarray(gates).reshape(-1)
        if self.bits and gates.size != self.bits[0].size:
            raise GateTraceError(f"gate vector of length {gates.size} after {self.bits[0].size}")
        self.bits.append(np.rint(gates).astype(np.int8))

    @property
    def layers(self) -> int:
        return len(self.bits)

    @property
    def num_nodes(self) -> int:
        return int(self.bits[0].size) if self.bits else 0

    def matrix(self) -> np.ndarray:
        """layers x nodes int8 array"""
        if not self.bits:
            return np.zeros((0, 0), dtype=np.int8)
        return np.stack(self.bits)

    def totals(self) -> np.ndarray:
        return self.matrix().sum(axis=0).astype(np.int64)

    def pass_rate(self) -> List[float]:
        return [float(b.mean()) for b in self.bits]

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "GateTrace":
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or not np.isin(matrix, (0, 1)).all():
            raise GateTraceError("gate trace must be a 2-D array of 0/1 bits")
        return cls([np.asarray(row, dtype=np.int8) for row in matrix])


def pinned_gates(tape: Tape, num_nodes: int, value: int) -> Tuple[Var, np.ndarray]:
    bits = np.full((num_nodes, 1), float(value))
    return tape.constant(bits), bits
