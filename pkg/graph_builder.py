"""
Graph data model and index construction for selfgate
Builds neighbor, related-triple and filter indexes, samples negatives and computes summaries
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import networkx as nx
import numpy as np

from errors import DatasetError, InvalidArgumentError
from rng import RngStream

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")

# Direction tags carried by every neighbor entry
DIRECTION_IN = 0   # entry (u, r) in N_v comes from the stored edge u -r-> v
DIRECTION_OUT = 1  # entry (u, r) in N_v comes from the stored edge v -r-> u


@dataclass(frozen=True)
class NeighborIndex:
    """Flat edge list view of N_v: one row per (neighbor u, relation r, receiver v, direction)"""
    num_nodes: int
    num_relations: int
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    direction: np.ndarray

    @property
    def num_entries(self) -> int:
        return int(self.src.size)

    def degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)

    def neighbors_of(self, v: int) -> List[Tuple[int, int, int]]:
        """(u, r, direction) entries of N_v in index order"""
        rows = np.flatnonzero(self.dst == v)
        return [(int(self.src[i]), int(self.rel[i]), int(self.direction[i])) for i in rows]


@dataclass
class HomogeneousGraph:
    """Single-relation labeled graph for node classification"""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    edges: np.ndarray
    splits: Dict[str, np.ndarray]
    neighbors: Optional[NeighborIndex] = None

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from((i, {"label": int(y)}) for i, y in enumerate(self.labels))
        graph.add_edges_from(map(tuple, self.edges.tolist()))
        return graph


@dataclass
class FilterIndex:
    """Known tails per (u, r) and known heads per (r, v) over train, valid and test"""
    tails: Dict[Tuple[int, int], Set[int]] = field(default_factory=dict)
    heads: Dict[Tuple[int, int], Set[int]] = field(default_factory=dict)

    def known_tails(self, u: int, r: int) -> Set[int]:
        return self.tails.get((u, r), set())

    def known_heads(self, r: int, v: int) -> Set[int]:
        return self.heads.get((r, v), set())


@dataclass
class KnowledgeGraph:
    """Entity/relation vocabularies, triple splits and the derived indexes"""
    entities: List[str]
    relations: List[str]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    neighbors: Optional[NeighborIndex] = None
    filter_index: Optional[FilterIndex] = None
    related_ptr: Optional[np.ndarray] = None
    related_rows: Optional[np.ndarray] = None

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)

    def counts(self) -> Dict[str, int]:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "train": int(self.train.shape[0]),
            "valid": int(self.valid.shape[0]),
            "test": int(self.test.shape[0]),
        }

    def related_triples(self, x: int) -> np.ndarray:
        """Row ids of train triples with head x or tail x (the set E_x)"""
        return self.related_rows[self.related_ptr[x]:self.related_ptr[x + 1]]


@dataclass
class NegativeBatch:
    """Positives followed by k corruptions each; labels 1 for positives, 0 for corruptions"""
    triples: np.ndarray
    labels: np.ndarray
    num_positives: int
    k: int

    @property
    def negatives(self) -> np.ndarray:
        return self.triples[self.num_positives:]


class GraphBuilder:
    """Validates graphs and builds the indexes the encoders and evaluator read"""

    def build_homogeneous(self, features: np.ndarray, labels: np.ndarray, num_classes: int,
                          edges: np.ndarray, splits: Dict[str, np.ndarray]) -> HomogeneousGraph:
        """Validate a node-classification graph and attach its neighbor index"""
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        n = features.shape[0]

        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {labels.shape[0]}")
        if not np.isfinite(features).all():
            raise DatasetError("feature rows must be finite")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DatasetError(f"label out of range (num_classes={num_classes})")

        edges = self._canonical_edges(np.asarray(edges, dtype=np.int64).reshape(-1, 2), n)

        seen: Set[int] = set()
        clean_splits = {}
        for name in SPLITS:
            ids = np.asarray(splits.get(name, []), dtype=np.int64)
            if ids.size == 0:
                raise DatasetError(f"empty split: {name}")
            if ids.min() < 0 or ids.max() >= n:
                raise DatasetError(f"node id out of range in split {name}")
            overlap = seen.intersection(ids.tolist())
            if overlap:
                raise DatasetError(f"split {name} overlaps an earlier split at node {min(overlap)}")
            seen.update(ids.tolist())
            clean_splits[name] = np.sort(ids)

        graph = HomogeneousGraph(features, labels, int(num_classes), edges, clean_splits)
        graph.neighbors = self.homogeneous_neighbors(graph)
        return graph

    def _canonical_edges(self, edges: np.ndarray, n: int) -> np.ndarray:
        """Undirected edges as sorted (min, max) pairs, deduplicated, self-loops kept"""
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise DatasetError(f"edge endpoint out of range (num_nodes={n})")
        if edges.size == 0:
            return np.zeros((0, 2), dtype=np.int64)
        canonical = np.sort(edges, axis=1)
        return np.unique(canonical, axis=0)

    def homogeneous_neighbors(self, graph: HomogeneousGraph) -> NeighborIndex:
        """Both directions of every undirected edge; a self-loop appears once in N_v"""
        u, v = graph.edges[:, 0], graph.edges[:, 1]
        loop = u == v
        src = np.concatenate([u, v[~loop]])
        dst = np.concatenate([v, u[~loop]])
        zeros = np.zeros(src.size, dtype=np.int64)
        return NeighborIndex(graph.num_nodes, 1, src, dst, zeros, zeros.copy())

    def build_kg(self, entities: List[str], relations: List[str],
                 splits: Dict[str, np.ndarray]) -> KnowledgeGraph:
        """Validate triple splits and build neighbor, related-triple and filter indexes"""
        arrays = {}
        for name in SPLITS:
            triples = np.asarray(splits.get(name, np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3)
            if triples.size:
                if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= len(entities):
                    raise DatasetError(f"entity id out of range in split {name}")
                if triples[:, 1].min() < 0 or triples[:, 1].max() >= len(relations):
                    raise DatasetError(f"relation id out of range in split {name}")
            arrays[name] = triples

        self._check_disjoint(arrays)

        kg = KnowledgeGraph(list(entities), list(relations),
                            arrays["train"], arrays["valid"], arrays["test"])
        kg.neighbors = self.kg_neighbors(kg)
        kg.related_ptr, kg.related_rows = self.related_index(kg)
        kg.filter_index = self.filter_index(kg)

        logger.info("Built KG indexes: %d entities, %d relations, %d neighbor entries",
                    kg.num_entities, kg.num_relations, kg.neighbors.num_entries)
        return kg

    def _check_disjoint(self, arrays: Dict[str, np.ndarray]) -> None:
        seen: Dict[Tuple[int, int, int], str] = {}
        for name in SPLITS:
            for triple in map(tuple, arrays[name].tolist()):
                owner = seen.get(triple)
                if owner is not None and owner != name:
                    raise DatasetError(f"triple {triple} appears in both {owner} and {name}")
                seen[triple] = name

    def kg_neighbors(self, kg: KnowledgeGraph) -> NeighborIndex:
        """N_v over train edges: the stored direction tagged in, the reverse tagged out"""
        heads, rels, tails = kg.train[:, 0], kg.train[:, 1], kg.train[:, 2]
        m = heads.size
        return NeighborIndex(
            num_nodes=kg.num_entities,
            num_relations=kg.num_relations,
            src=np.concatenate([heads, tails]),
            dst=np.concatenate([tails, heads]),
            rel=np.concatenate([rels, rels]),
            direction=np.concatenate([np.full(m, DIRECTION_IN), np.full(m, DIRECTION_OUT)]).astype(np.int64),
        )

    def related_index(self, kg: KnowledgeGraph) -> Tuple[np.ndarray, np.ndarray]:
        """CSR layout of E_x: for each entity, sorted ids of train triples touching it"""
        m = kg.train.shape[0]
        if m == 0:
            return np.zeros(kg.num_entities + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        rows = np.arange(m, dtype=np.int64)
        ent = np.concatenate([kg.train[:, 0], kg.train[:, 2]])
        row = np.concatenate([rows, rows])
        # Self-loop triples touch their entity once
        pairs = np.unique(np.stack([ent, row], axis=1), axis=0)
        counts = np.bincount(pairs[:, 0], minlength=kg.num_entities)
        ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return ptr, pairs[:, 1].copy()

    def filter_index(self, kg: KnowledgeGraph) -> FilterIndex:
        tails: Dict[Tuple[int, int], Set[int]] = defaultdict(set)
        heads: Dict[Tuple[int, int], Set[int]] = defaultdict(set)
        for name in SPLITS:
            for u, r, v in kg.split(name).tolist():
                tails[(u, r)].add(v)
                heads[(r, v)].add(u)
        return FilterIndex(dict(tails), dict(heads))


def filtered_candidates(kg: KnowledgeGraph, triple: Tuple[int, int, int],
                        direction: str) -> Tuple[np.ndarray, int]:
    """Candidate entities for the head or tail slot under the filtered setting

    Drops every entity e other than the answer whose substituted triple is known in
    train, valid or test. Returns the ascending candidate list and the answer's position.
    """
    u, r, v = (int(x) for x in triple)
    n = kg.num_entities
    if not (0 <= u < n and 0 <= v < n and 0 <= r < kg.num_relations):
        raise DatasetError(f"triple {triple} outside vocabulary")
    if direction == "tail":
        answer, known = v, kg.filter_index.known_tails(u, r)
    elif direction == "head":
        answer, known = u, kg.filter_index.known_heads(r, v)
    else:
        raise InvalidArgumentError(f"direction must be 'head' or 'tail', got {direction!r}")

    keep = np.ones(n, dtype=bool)
    drop = [e for e in known if e != answer]
    if drop:
        keep[np.asarray(drop, dtype=np.int64)] = False
    candidates = np.flatnonzero(keep)
    position = int(np.searchsorted(candidates, answer))
    return candidates, position


def sample_negatives(positives: np.ndarray, k: int, num_entities: int,
                     rng: RngStream) -> NegativeBatch:
    """k corruptions per positive: fair coin picks head or tail, replacement uniform over V minus the original"""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if num_entities < 2:
        raise DatasetError("negative sampling needs at least 2 entities")

    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    b = positives.shape[0]
    corrupted = np.repeat(positives, k, axis=0)

    corrupt_head = rng.uniform((b * k,)) < 0.5
    slot = np.where(corrupt_head, 0, 2)
    original = corrupted[np.arange(b * k), slot]
    replacement = rng.integers(0, num_entities - 1, size=b * k)
    replacement = replacement + (replacement >= original)
    corrupted[np.arange(b * k), slot] = replacement

    triples = np.vstack([positives, corrupted])
    labels = np.concatenate([np.ones(b), np.zeros(b * k)])
    return NegativeBatch(triples, labels, b, k)


def graph_summary(graph: HomogeneousGraph) -> Dict[str, float]:
    """Basic statistics of a node-classification graph"""
    g = graph.to_networkx()
    labels = graph.labels
    non_loop = graph.edges[graph.edges[:, 0] != graph.edges[:, 1]]
    if non_loop.size:
        homophily = float(np.mean(labels[non_loop[:, 0]] == labels[non_loop[:, 1]]))
    else:
        homophily = 0.0
    return {
        "num_nodes": g.number_of_nodes(),
        "num_edges": g.number_of_edges(),
        "density": nx.density(g),
        "num_components": nx.number_connected_components(g),
        "edge_homophily": homophily,
        "num_classes": graph.num_classes,
    }


def kg_summary(kg: KnowledgeGraph) -> Dict[str, float]:
    """Split counts plus the mean train degree"""
    summary = dict(kg.counts())
    summary["mean_degree"] = float(kg.neighbors.num_entries / max(kg.num_entities, 1))
    return summary
