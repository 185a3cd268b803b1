import numpy as np
import pytest

from conftest import make_kg, random_kg
from errors import DatasetError, InvalidArgumentError
from graph_builder import (DIRECTION_IN, DIRECTION_OUT, GraphBuilder, filtered_candidates,
                           graph_summary, kg_summary, sample_negatives)
from rng import RngStream


class TestKnowledgeGraph:
    def test_neighbors_carry_both_directions(self):
        # a=0, b=1, c=2; (a,r,b), (b,r,c)
        kg = make_kg(3, 1, [(0, 0, 1), (1, 0, 2)])
        assert sorted(kg.neighbors.neighbors_of(1)) == [(0, 0, DIRECTION_IN), (2, 0, DIRECTION_OUT)]
        assert kg.neighbors.neighbors_of(0) == [(1, 0, DIRECTION_OUT)]

    def test_related_triples_are_exactly_incident_train_triples(self, tiny_kg):
        for x in range(tiny_kg.num_entities):
            expected = [i for i, (u, _, v) in enumerate(tiny_kg.train.tolist()) if x in (u, v)]
            assert tiny_kg.related_triples(x).tolist() == expected
        assert tiny_kg.related_triples(5).size == 0

    def test_counts(self, tiny_kg):
        assert tiny_kg.counts() == {"entities": 6, "relations": 2, "train": 7, "valid": 1, "test": 3}
        assert kg_summary(tiny_kg)["mean_degree"] == pytest.approx(14 / 6)

    def test_out_of_vocabulary_triple(self):
        with pytest.raises(DatasetError):
            make_kg(2, 1, [(0, 0, 2)])
        with pytest.raises(DatasetError):
            make_kg(2, 1, [(0, 1, 1)])

    def test_overlapping_splits_rejected(self):
        with pytest.raises(DatasetError):
            make_kg(3, 1, [(0, 0, 1)], test=[(0, 0, 1)])

    def test_rebuild_is_idempotent(self, tiny_kg):
        again = make_kg(6, 2, tiny_kg.train, tiny_kg.valid, tiny_kg.test)
        for field in ("src", "dst", "rel", "direction"):
            np.testing.assert_array_equal(getattr(again.neighbors, field), getattr(tiny_kg.neighbors, field))
        np.testing.assert_array_equal(again.related_rows, tiny_kg.related_rows)
        assert again.filter_index == tiny_kg.filter_index


class TestFilteredCandidates:
    def test_nothing_extra_to_filter(self):
        # a=0, b=1, c=2; train (c,r,b), test (a,r,b)
        kg = make_kg(3, 1, [(2, 0, 1)], test=[(0, 0, 1)])
        candidates, position = filtered_candidates(kg, (0, 0, 1), "tail")
        assert candidates.tolist() == [0, 1, 2]
        assert candidates[position] == 1

    def test_known_tail_is_removed(self):
        kg = make_kg(3, 1, [(2, 0, 1), (0, 0, 2)], test=[(0, 0, 1)])
        candidates, position = filtered_candidates(kg, (0, 0, 1), "tail")
        assert candidates.tolist() == [0, 1]
        assert candidates[position] == 1

    def test_answer_kept_even_when_in_train(self):
        kg = make_kg(3, 1, [(0, 0, 1), (0, 0, 2)])
        candidates, position = filtered_candidates(kg, (0, 0, 1), "tail")
        assert 1 in candidates.tolist() and 2 not in candidates.tolist()
        assert candidates[position] == 1

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            kg = random_kg(rng, int(rng.integers(8, 30)), int(rng.integers(1, 4)), 40)
            known = {tuple(t) for name in ("train", "valid", "test") for t in kg.split(name).tolist()}
            for u, r, v in kg.test.tolist():
                expect_tail = [e for e in range(kg.num_entities) if e == v or (u, r, e) not in known]
                expect_head = [e for e in range(kg.num_entities) if e == u or (e, r, v) not in known]
                assert filtered_candidates(kg, (u, r, v), "tail")[0].tolist() == expect_tail
                assert filtered_candidates(kg, (u, r, v), "head")[0].tolist() == expect_head

    def test_bad_direction_and_vocabulary(self, tiny_kg):
        with pytest.raises(InvalidArgumentError):
            filtered_candidates(tiny_kg, (0, 0, 1), "middle")
        with pytest.raises(DatasetError):
            filtered_candidates(tiny_kg, (0, 0, 99), "tail")


class TestNegativeSampling:
    def test_k_corruptions_each_differing_in_one_slot(self):
        positives = np.array([[0, 1, 2]])
        batch = sample_negatives(positives, 10, 20, RngStream(0))
        assert batch.negatives.shape == (10, 3)
        assert batch.labels.tolist() == [1.0] + [0.0] * 10
        for neg in batch.negatives:
            diff = neg != positives[0]
            assert diff.sum() == 1 and not diff[1]

    def test_two_entities_force_the_other_one(self):
        batch = sample_negatives(np.array([[0, 0, 1]]), 50, 2, RngStream(1))
        for u, _, v in batch.negatives.tolist():
            assert (u, v) in ((1, 1), (0, 0))

    def test_never_returns_the_positive(self):
        positives = np.array([[i % 7, 0, (i * 3) % 7] for i in range(30)])
        batch = sample_negatives(positives, 5, 7, RngStream(4))
        repeated = np.repeat(positives, 5, axis=0)
        assert not (batch.negatives == repeated).all(axis=1).any()

    def test_deterministic(self):
        positives = np.array([[0, 0, 1], [2, 1, 3]])
        a = sample_negatives(positives, 4, 10, RngStream(9))
        b = sample_negatives(positives, 4, 10, RngStream(9))
        np.testing.assert_array_equal(a.triples, b.triples)

    def test_heads_and_tails_both_corrupted(self):
        batch = sample_negatives(np.zeros((200, 3), dtype=np.int64), 1, 50, RngStream(2))
        heads = (batch.negatives[:, 0] != 0).mean()
        assert 0.35 < heads < 0.65

    def test_degenerate_inputs(self):
        with pytest.raises(DatasetError):
            sample_negatives(np.array([[0, 0, 0]]), 1, 1, RngStream(0))
        with pytest.raises(InvalidArgumentError):
            sample_negatives(np.array([[0, 0, 1]]), 0, 5, RngStream(0))


class TestHomogeneousGraph:
    def test_duplicates_collapse_and_self_loops_stay(self):
        graph = GraphBuilder().build_homogeneous(
            np.zeros((3, 2)), [0, 1, 0], 2, [[0, 1], [1, 0], [0, 1], [2, 2]],
            {"train": [0], "valid": [1], "test": [2]})
        assert graph.edges.tolist() == [[0, 1], [2, 2]]
        assert sorted(graph.neighbors.neighbors_of(2)) == [(2, 0, 0)]
        assert graph.neighbors.degree().tolist() == [1, 1, 1]

    def test_validation(self):
        builder = GraphBuilder()
        splits = {"train": [0], "valid": [1], "test": [2]}
        with pytest.raises(DatasetError):
            builder.build_homogeneous(np.zeros((3, 2)), [0, 2, 0], 2, [], splits)
        with pytest.raises(DatasetError):
            builder.build_homogeneous(np.zeros((3, 2)), [0, 1, 0], 2, [[0, 3]], splits)
        with pytest.raises(DatasetError):
            builder.build_homogeneous(np.zeros((3, 2)), [0, 1, 0], 2, [], {"train": [0], "valid": [0], "test": [2]})
        with pytest.raises(DatasetError):
            builder.build_homogeneous(np.zeros((3, 2)), [0, 1, 0], 2, [], {"train": [0, 1], "valid": [], "test": [2]})

    def test_summary(self, tiny_graph):
        summary = graph_summary(tiny_graph)
        assert summary["num_nodes"] == 6
        assert summary["num_edges"] == 6
        assert summary["num_components"] == 2
        # edges 0-1, 1-2, 2-3, 3-4, 4-0, 1-3 with labels 0,0,1,1,0,1
        assert summary["edge_homophily"] == pytest.approx(3 / 6)
