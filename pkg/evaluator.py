"""
Evaluation for selfgate
Filtered link-prediction ranking, classification accuracy and the gate-trace category analysis
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from autograd import Tape
from decoders import score_candidates
from errors import GateTraceError, InvalidArgumentError
from graph_builder import HomogeneousGraph, KnowledgeGraph, filtered_candidates
from rng import RngStream
from self_filter import GateTrace

logger = logging.getLogger(__name__)

# score_fn(u, r, v, direction) -> scores of every entity placed in that slot
ScoreFn = Callable[[int, int, int, str], np.ndarray]

HIT_LEVELS = (1, 3, 10)
CATEGORY_COLUMNS = ["category", "count", "percent", "MRR", "H@10", "H@3", "H@1"]


@dataclass
class RankRecord:
    """Head and tail ranks of one triple; the final rank is their mean"""
    triple: Tuple[int, int, int]
    head_rank: int
    tail_rank: int

    @property
    def final_rank(self) -> float:
        return (self.head_rank + self.tail_rank) / 2.0


@dataclass
class MetricsReport:
    mrr: float
    hits_at_1: float
    hits_at_3: float
    hits_at_10: float
    count: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "MRR": self.mrr,
            "H@1": self.hits_at_1,
            "H@3": self.hits_at_3,
            "H@10": self.hits_at_10,
            "count": self.count,
        }


def filtered_rank(scores: np.ndarray, candidates: np.ndarray, position: int) -> int:
    """1 + candidates scoring above the answer + other candidates tying with it"""
    candidate_scores = scores[candidates]
    answer = candidate_scores[position]
    greater = int(np.count_nonzero(candidate_scores > answer))
    ties = int(np.count_nonzero(candidate_scores == answer)) - 1
    return 1 + greater + ties


def rank_triple(score_fn: ScoreFn, triple: Sequence[int], kg: KnowledgeGraph) -> RankRecord:
    u, r, v = (int(x) for x in triple)
    ranks = {}
    for direction in ("head", "tail"):
        candidates, position = filtered_candidates(kg, (u, r, v), direction)
        ranks[direction] = filtered_rank(np.asarray(score_fn(u, r, v, direction)), candidates, position)
    return RankRecord((u, r, v), ranks["head"], ranks["tail"])


def compute_metrics(records: Sequence[RankRecord]) -> MetricsReport:
    if not records:
        raise InvalidArgumentError("compute_metrics needs at least one rank record")
    ranks = np.array([rec.final_rank for rec in records], dtype=np.float64)
    return MetricsReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits_at_1=float(np.mean(ranks <= 1)),
        hits_at_3=float(np.mean(ranks <= 3)),
        hits_at_10=float(np.mean(ranks <= 10)),
        count=len(records),
    )


def accuracy(predictions: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked nodes predicted correctly; 2-D predictions are argmax-ed per row"""
    mask = np.asarray(mask, dtype=np.int64).ravel()
    if mask.size == 0:
        raise InvalidArgumentError("accuracy mask is empty")
    predictions = np.asarray(predictions)
    if predictions.ndim == 2:
        predictions = np.argmax(predictions, axis=1)
    return float(np.mean(predictions[mask] == np.asarray(labels)[mask]))


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation"""
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise InvalidArgumentError("mean_std needs at least one value")
    return float(array.mean()), float(array.std())


def format_mean_std(mean: float, std: float, digits: int = 4) -> str:
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def average_triple_ranks(records: Sequence[RankRecord]) -> Dict[int, float]:
    """atr_v: mean final rank over the records whose head or tail is v"""
    ranks: Dict[int, List[float]] = defaultdict(list)
    for rec in records:
        u, _, v = rec.triple
        for entity in {u, v}:
            ranks[entity].append(rec.final_rank)
    return {entity: float(np.mean(values)) for entity, values in sorted(ranks.items())}


def sfm_category_analysis(trace: GateTrace, records: Sequence[RankRecord]) -> Tuple[pd.DataFrame, float]:
    """Group test entities by how many layers their representation passed the gate

    Returns the per-category table (non-empty categories, ascending) and the global
    entity-level MRR, the mean of 1/atr_v over all test entities.
    """
    if trace is None or trace.layers == 0:
        raise GateTraceError("no gate trace")
    if not records:
        raise GateTraceError("no rank records to analyze")
    atr = average_triple_ranks(records)
    entities = np.fromiter(atr.keys(), dtype=np.int64)
    if entities.max() >= trace.num_nodes:
        raise GateTraceError(f"trace covers {trace.num_nodes} nodes but records reference entity {entities.max()}")

    totals = trace.totals()[entities]
    atr_values = np.fromiter(atr.values(), dtype=np.float64)
    reciprocal = 1.0 / atr_values
    rows = []
    for i in range(trace.layers + 1):
        members = totals == i
        count = int(members.sum())
        if count == 0:
            continue
        rows.append({
            "category": i,
            "count": count,
            "percent": 100.0 * count / entities.size,
            "MRR": float(reciprocal[members].mean()),
            "H@10": float(np.mean(atr_values[members] <= 10)),
            "H@3": float(np.mean(atr_values[members] <= 3)),
            "H@1": float(np.mean(atr_values[members] <= 1)),
        })
    table = pd.DataFrame(rows, columns=CATEGORY_COLUMNS)
    return table, float(reciprocal.mean())


def quality_trend(table: pd.DataFrame) -> str:
    """'increasing', 'decreasing' or 'mixed' MRR as the number of gate passes grows"""
    mrr = table.sort_values("category")["MRR"].to_numpy()
    if mrr.size < 2:
        return "mixed"
    steps = np.diff(mrr)
    if (steps >= 0).all():
        return "increasing"
    if (steps <= 0).all():
        return "decreasing"
    return "mixed"


def _eval_forward(model, params, seed: int):
    tape = Tape()
    result = model.forward(tape, params, mode="eval", rng=RngStream(seed, "eval"))
    return tape, result


def evaluate_link_prediction(model, params: Dict[str, np.ndarray], kg: KnowledgeGraph, split: str,
                             seed: int = 0) -> Tuple[List[RankRecord], MetricsReport, Optional[GateTrace]]:
    """Filtered ranks for every triple of `split` under eval-mode gates"""
    _, result = _eval_forward(model, params, seed)
    H, R = result.H.value, result.R.value
    kind = model.config.decoder

    def score_fn(u, r, v, direction):
        return score_candidates(kind, H, R, u, r, v, direction)

    records = [rank_triple(score_fn, triple, kg) for triple in kg.split(split).tolist()]
    report = compute_metrics(records)
    logger.info("Link prediction on %s: MRR %.4f, H@10 %.4f over %d triples",
                split, report.mrr, report.hits_at_10, report.count)
    return records, report, result.trace


def evaluate_node_classification(model, params: Dict[str, np.ndarray], graph: HomogeneousGraph,
                                 split: str, seed: int = 0) -> float:
    tape, result = _eval_forward(model, params, seed)
    logits = model.logits(tape, result)
    score = accuracy(logits.value, graph.labels, graph.splits[split])
    logger.info("Node classification accuracy on %s: %.4f", split, score)
    return score
