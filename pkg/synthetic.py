"""
Synthetic dataset generators for selfgate
Stochastic-block-model node-classification graphs and rule-generated ring knowledge graphs
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from errors import DatasetError, InvalidArgumentError
from graph_builder import SPLITS, GraphBuilder, HomogeneousGraph, KnowledgeGraph
from rng import RngStream

logger = logging.getLogger(__name__)

KG_RULES = ("compose", "inverse", "symmetric")


def stratified_split(labels: np.ndarray, rng: RngStream,
                     fractions: Tuple[float, float] = (0.6, 0.2)) -> Dict[str, np.ndarray]:
    """Per-class shuffle, then the first 60% train, next 20% valid, the rest test"""
    train, valid, test = [], [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        n_train = int(round(fractions[0] * members.size))
        n_valid = int(round(fractions[1] * members.size))
        train.append(members[:n_train])
        valid.append(members[n_train:n_train + n_valid])
        test.append(members[n_train + n_valid:])
    splits = {
        "train": np.sort(np.concatenate(train)),
        "valid": np.sort(np.concatenate(valid)),
        "test": np.sort(np.concatenate(test)),
    }
    for name in SPLITS:
        if splits[name].size == 0:
            raise DatasetError(f"stratified split left {name} empty; use more nodes per class")
    return splits


def _block_probabilities(sizes: List[int], homophily: float, avg_degree: float) -> np.ndarray:
    """Intra/inter edge probabilities so the expected intra-class edge share equals `homophily`"""
    n = sum(sizes)
    expected_edges = n * avg_degree / 2.0
    intra_pairs = sum(s * (s - 1) / 2.0 for s in sizes)
    inter_pairs = (n * n - sum(s * s for s in sizes)) / 2.0
    p_in = min(1.0, homophily * expected_edges / intra_pairs) if intra_pairs else 0.0
    p_out = min(1.0, (1.0 - homophily) * expected_edges / inter_pairs) if inter_pairs else 0.0
    k = len(sizes)
    probs = np.full((k, k), p_out)
    np.fill_diagonal(probs, p_in)
    return probs


def gen_synthetic_nc(nodes: int, classes: int, homophily: float, noise_fraction: float,
                     feature_dim: int, rng: RngStream, avg_degree: float = 8.0,
                     class_sep: float = 1.0) -> HomogeneousGraph:
    """SBM graph with class-conditioned Gaussian features and a planted pure-noise subset"""
    if classes < 2:
        raise InvalidArgumentError("classes must be >= 2")
    if nodes < classes:
        raise InvalidArgumentError("nodes must be >= classes")
    if not 0.0 <= homophily <= 1.0:
        raise InvalidArgumentError("homophily must lie in [0, 1]")
    if not 0.0 <= noise_fraction <= 1.0:
        raise InvalidArgumentError("noise_fraction must lie in [0, 1]")
    if feature_dim < 1 or avg_degree <= 0:
        raise InvalidArgumentError("feature_dim must be >= 1 and avg_degree > 0")

    base, extra = divmod(nodes, classes)
    sizes = [base + (1 if c < extra else 0) for c in range(classes)]
    probs = _block_probabilities(sizes, homophily, avg_degree)

    # networkx numbers nodes block by block; relabel with a permutation
    sbm = nx.stochastic_block_model(sizes, probs.tolist(), seed=rng.child_seed())
    perm = rng.permutation(nodes)
    block_labels = np.array([sbm.nodes[i]["block"] for i in range(nodes)], dtype=np.int64)
    labels = np.empty(nodes, dtype=np.int64)
    labels[perm] = block_labels
    edges = np.array([(perm[u], perm[v]) for u, v in sorted(sbm.edges())], dtype=np.int64).reshape(-1, 2)

    means = rng.normal((classes, feature_dim), scale=class_sep)
    features = means[labels] + rng.normal((nodes, feature_dim))

    n_noise = int(round(noise_fraction * nodes))
    noisy = np.sort(rng.permutation(nodes)[:n_noise])
    if n_noise:
        # Same marginal scale as informative rows, but independent of the class
        features[noisy] = rng.normal((n_noise, feature_dim), scale=float(np.sqrt(class_sep ** 2 + 1.0)))

    splits = stratified_split(labels, rng)
    graph = GraphBuilder().build_homogeneous(features, labels, classes, edges, splits)
    logger.info("Generated SBM graph: %d nodes, %d edges, %d noisy nodes",
                graph.num_nodes, graph.num_edges, n_noise)
    return graph


def _relation_steps(relations: int, pattern: Sequence[str]) -> List[List[int]]:
    """Ring offsets per relation: relation 0 is the successor, the rest follow the rule cycle"""
    steps: List[List[int]] = [[1]]
    distance = 1
    for j in range(1, relations):
        rule = pattern[(j - 1) % len(pattern)]
        if rule == "compose":
            distance += 1
            steps.append([distance])
        elif rule == "inverse":
            steps.append([-s for s in steps[j - 1]])
        elif rule == "symmetric":
            distance += 1
            steps.append([distance, -distance])
        else:
            raise InvalidArgumentError(f"unknown rule {rule!r}; expected one of {KG_RULES}")
    return steps


def _split_no_unseen(triples: np.ndarray, rng: RngStream) -> Dict[str, np.ndarray]:
    """80/10/10 shuffle, then move held-out triples whose entity or relation is unseen in train"""
    order = rng.permutation(triples.shape[0])
    shuffled = triples[order]
    n = shuffled.shape[0]
    n_test = n // 10
    n_valid = n // 10
    test = shuffled[:n_test]
    valid = shuffled[n_test:n_test + n_valid]
    train = [tuple(t) for t in shuffled[n_test + n_valid:].tolist()]

    seen_entities = {t[0] for t in train} | {t[2] for t in train}
    seen_relations = {t[1] for t in train}
    kept = {"valid": [], "test": []}
    for name, block in (("test", test), ("valid", valid)):
        for u, r, v in block.tolist():
            if u in seen_entities and v in seen_entities and r in seen_relations:
                kept[name].append((u, r, v))
            else:
                train.append((u, r, v))
                seen_entities.update((u, v))
                seen_relations.add(r)

    def as_array(rows):
        return np.asarray(rows, dtype=np.int64).reshape(-1, 3)

    return {"train": as_array(train), "valid": as_array(kept["valid"]), "test": as_array(kept["test"])}


def gen_synthetic_kg(entities: int, relations: int, rng: RngStream,
                     pattern: Optional[Sequence[str]] = None) -> KnowledgeGraph:
    """Ring KG: relation 0 links each entity to its ring successor, later relations derive from it

    With the default `compose` rule relation j links entities j+1 steps apart, so every
    held-out triple is a composition of successor edges seen in training.
    """
    if entities < 10:
        raise InvalidArgumentError("entities must be >= 10")
    if relations < 2:
        raise InvalidArgumentError("relations must be >= 2")
    pattern = tuple(pattern) if pattern else ("compose",)

    ring = rng.permutation(entities)
    rows = set()
    for r, offsets in enumerate(_relation_steps(relations, pattern)):
        for s in offsets:
            if s % entities == 0:
                continue
            for p in range(entities):
                rows.add((int(ring[p]), r, int(ring[(p + s) % entities])))
    if len(rows) < 10:
        raise DatasetError(f"rule set produced only {len(rows)} triples")

    triples = np.asarray(sorted(rows), dtype=np.int64)
    splits = _split_no_unseen(triples, rng)
    width = len(str(entities - 1))
    entity_names = [f"e{i:0{width}d}" for i in range(entities)]
    relation_names = [f"r{j}" for j in range(relations)]
    kg = GraphBuilder().build_kg(entity_names, relation_names, splits)
    logger.info("Generated ring KG: %s", kg.counts())
    return kg
