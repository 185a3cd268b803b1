"""Shared fixtures: small hand-made graphs and a finite-difference gradient checker"""

from typing import Callable, Dict

import numpy as np
import pytest

from graph_builder import GraphBuilder, HomogeneousGraph, KnowledgeGraph


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the desk-scale training experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_kg(num_entities: int, num_relations: int, train, valid=(), test=()) -> KnowledgeGraph:
    return GraphBuilder().build_kg(
        [f"e{i}" for i in range(num_entities)],
        [f"r{j}" for j in range(num_relations)],
        {
            "train": np.asarray(train, dtype=np.int64).reshape(-1, 3),
            "valid": np.asarray(valid, dtype=np.int64).reshape(-1, 3),
            "test": np.asarray(test, dtype=np.int64).reshape(-1, 3),
        },
    )


def random_kg(rng: np.random.Generator, num_entities: int, num_relations: int,
              num_triples: int) -> KnowledgeGraph:
    """Random KG with distinct triples spread over the three splits"""
    seen = set()
    while len(seen) < num_triples:
        seen.add((int(rng.integers(num_entities)), int(rng.integers(num_relations)),
                  int(rng.integers(num_entities))))
    triples = np.asarray(sorted(seen), dtype=np.int64)[rng.permutation(num_triples)]
    n_test = max(1, num_triples // 5)
    return make_kg(num_entities, num_relations, triples[2 * n_test:],
                   triples[n_test:2 * n_test], triples[:n_test])


@pytest.fixture
def tiny_kg() -> KnowledgeGraph:
    """6 entities, 2 relations, one isolated-in-train entity (5)"""
    train = [(0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 0, 4), (0, 1, 2), (4, 1, 0), (1, 1, 3)]
    valid = [(0, 0, 2)]
    test = [(2, 0, 3), (1, 0, 4), (5, 1, 0)]
    return make_kg(6, 2, train, valid, test)


@pytest.fixture
def tiny_graph() -> HomogeneousGraph:
    """6-node, 2-class graph with 3 features; node 5 is isolated"""
    rng = np.random.default_rng(3)
    features = rng.normal(size=(6, 3))
    labels = np.array([0, 0, 1, 1, 0, 1])
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 0], [1, 3]])
    splits = {"train": np.array([0, 1, 2]), "valid": np.array([3]), "test": np.array([4, 5])}
    return GraphBuilder().build_homogeneous(features, labels, 2, edges, splits)


def numeric_gradients(loss_fn: Callable[[Dict[str, np.ndarray]], float],
                      params: Dict[str, np.ndarray], eps: float = 1e-6) -> Dict[str, np.ndarray]:
    """Central differences of loss_fn with respect to every entry of every parameter"""
    grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = {k: v.copy() for k, v in params.items()}
            shifted[name][idx] = value[idx] + eps
            up = loss_fn(shifted)
            shifted[name][idx] = value[idx] - eps
            down = loss_fn(shifted)
            grad[idx] = (up - down) / (2.0 * eps)
        grads[name] = grad
    return grads


def assert_gradients_close(analytic: Dict[str, np.ndarray], numeric: Dict[str, np.ndarray],
                           rtol: float = 1e-4, atol: float = 1e-7) -> None:
    assert set(analytic) == set(numeric)
    for name in numeric:
        a, n = analytic[name], numeric[name]
        assert a.shape == n.shape, name
        scale = np.maximum(np.abs(a), np.abs(n))
        ok = (np.abs(a - n) <= atol) | (np.abs(a - n) <= rtol * scale)
        assert ok.all(), f"{name}: analytic {a[~ok]} vs numeric {n[~ok]}"


@pytest.fixture
def grad_check():
    """grad_check(loss_fn, params, analytic) compares analytic gradients with central differences"""
    def check(loss_fn, params, analytic, eps=1e-6, rtol=1e-4, atol=1e-7):
        assert_gradients_close(analytic, numeric_gradients(loss_fn, params, eps), rtol, atol)
    return check
