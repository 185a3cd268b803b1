import json
import os

import numpy as np
import pytest

from autograd import Tape
from config import RunConfig
from errors import DivergenceError
from rng import RngStream
from storage import load_checkpoint
from synthetic import gen_synthetic_kg, gen_synthetic_nc
from trainer import LAST_GOOD, Trainer, model_from_checkpoint, resplit_graph, train


@pytest.fixture(scope="module")
def ring_kg():
    return gen_synthetic_kg(12, 2, RngStream(0))


@pytest.fixture(scope="module")
def small_nc():
    return gen_synthetic_nc(60, 2, 0.9, 0.0, 4, RngStream(1), avg_degree=4.0)


def kg_config(out_dir, **overrides):
    config = RunConfig()
    settings = {"model.encoder": "compgcn", "model.layers": 2, "model.dim": 8, "train.epochs": 20,
                "train.lr": 0.05, "train.negatives": 4, "output.dir": str(out_dir), "output.run_db": None}
    settings.update(overrides)
    for key, value in settings.items():
        config.set(key, value)
    return config


def reference_nc_loss(graph, params, layers):
    """Single-stream mean aggregation and classifier loss written directly in numpy"""
    n = graph.num_nodes
    adjacency = np.zeros((n, n))
    for u, v in graph.edges:
        adjacency[u, v] = adjacency[v, u] = 1.0
    mean = adjacency / np.maximum(adjacency.sum(axis=1, keepdims=True), 1.0)
    H = graph.features @ params["emb.proj"]
    for l in range(layers):
        H = np.maximum(H @ params[f"layer{l}.W_self"] + mean @ H @ params[f"layer{l}.W_neigh"], 0.0)
    hidden = np.maximum(H @ params["clf.W1"] + params["clf.b1"], 0.0)
    logits = hidden @ params["clf.W2"] + params["clf.b2"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    train = graph.splits["train"]
    return float(-log_probs[train, graph.labels[train]].mean())


class TestLinkPredictionTraining:
    def test_loss_decreases(self, ring_kg, tmp_path):
        result = train(kg_config(tmp_path), graph=ring_kg, write=False)
        losses = [record["loss"] for record in result.history]
        assert len(losses) == 20
        assert np.mean(losses[-3:]) < losses[0]

    def test_base_loss_strictly_decreases_early_on(self, ring_kg, tmp_path):
        config = kg_config(tmp_path, **{"model.variant": "base", "model.decoder": "distmult", "model.dim": 32,
                                        "train.epochs": 30, "train.lr": 0.01, "train.negatives": 10})
        losses = [record["loss"] for record in train(config, graph=ring_kg, write=False).history]
        assert len(losses) == 30
        for before, after in zip(losses[:9], losses[1:10]):
            assert after < before

    def test_same_seed_gives_identical_parameters(self, ring_kg, tmp_path):
        a = train(kg_config(tmp_path, **{"train.epochs": 3}), graph=ring_kg, write=False)
        b = train(kg_config(tmp_path, **{"train.epochs": 3}), graph=ring_kg, write=False)
        for name, value in a.checkpoint.params.items():
            np.testing.assert_array_equal(b.checkpoint.params[name], value)
        assert a.history == b.history

    def test_checkpoint_roundtrip_reproduces_the_forward_pass(self, ring_kg, tmp_path):
        result = train(kg_config(tmp_path, **{"train.epochs": 4}), graph=ring_kg)
        assert result.checkpoint_path == os.path.join(str(tmp_path), "model.ckpt")
        loaded = load_checkpoint(result.checkpoint_path)
        model, graph, config = model_from_checkpoint(loaded, ring_kg)
        assert config.model.layers == 2
        before = result.model.forward(Tape(), result.checkpoint.params, mode="eval", rng=RngStream(0, "eval"))
        after = model.forward(Tape(), loaded.params, mode="eval", rng=RngStream(0, "eval"))
        np.testing.assert_array_equal(before.H.value, after.H.value)
        np.testing.assert_array_equal(loaded.gate_trace, after.trace.matrix())

    def test_metric_log_has_one_line_per_epoch(self, ring_kg, tmp_path):
        train(kg_config(tmp_path, **{"train.epochs": 3}), graph=ring_kg)
        lines = (tmp_path / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
        records = [json.loads(line) for line in lines]
        assert [r["epoch"] for r in records] == [1, 2, 3]
        assert set(records[0]) == {"epoch", "loss", "valid_metric", "lr"}
        # each record carries the rate its first step used
        assert [r["lr"] for r in records] == pytest.approx([0.05, 0.05 * 2 / 3, 0.05 / 3])

    def test_base_checkpoint_has_no_trace(self, ring_kg, tmp_path):
        result = train(kg_config(tmp_path, **{"train.epochs": 2, "model.variant": "base"}), graph=ring_kg,
                       write=False)
        assert result.checkpoint.gate_trace is None
        assert not any(name.startswith("gate.") for name in result.checkpoint.params)

    def test_divergence_keeps_the_last_good_parameters(self, ring_kg, tmp_path):
        config = kg_config(tmp_path, **{"train.lr": 1e300, "train.epochs": 3, "train.clip_norm": 1e300})
        with pytest.raises(DivergenceError) as info:
            train(config, graph=ring_kg)
        assert info.value.epoch == 1
        assert info.value.checkpoint_path == os.path.join(str(tmp_path), LAST_GOOD)
        saved = load_checkpoint(info.value.checkpoint_path)
        assert all(np.isfinite(value).all() for value in saved.params.values())

    def test_temperature_anneals_linearly(self, ring_kg, tmp_path):
        trainer = Trainer(kg_config(tmp_path, **{"gate.tau": 1.0, "gate.tau_final": 0.2}), ring_kg)
        assert trainer.tau_at(0, 10) == 1.0
        assert trainer.tau_at(5, 10) == pytest.approx(0.6)
        assert trainer.tau_at(10, 10) == pytest.approx(0.2)
        fixed = Trainer(kg_config(tmp_path), ring_kg)
        assert fixed.tau_at(7, 10) == 1.0


class TestNodeClassificationTraining:
    def test_sfgnn_training_selects_on_valid_accuracy(self, small_nc, tmp_path):
        config = kg_config(tmp_path, **{"model.encoder": "mean", "train.epochs": 15, "train.lr": 0.02})
        result = train(config, graph=small_nc, write=False)
        metrics = [r["valid_metric"] for r in result.history]
        assert result.checkpoint.best_metric == max(metrics)
        assert result.checkpoint.epoch == metrics.index(max(metrics)) + 1
        assert result.checkpoint.gate_trace.shape == (2, 60)

    @pytest.mark.parametrize("variant,pin", [("base", None), ("sfgnn", 1)])
    def test_per_step_loss_matches_a_single_stream_reference(self, tiny_graph, tmp_path, variant, pin):
        config = kg_config(tmp_path, **{"model.encoder": "mean", "model.activation": "relu", "model.dim": 4,
                                        "model.variant": variant, "gate.pin": pin, "train.epochs": 5,
                                        "train.lr": 0.05})
        trainer = Trainer(config, tiny_graph)
        state = trainer.init_state()
        for _ in range(5):
            expected = reference_nc_loss(tiny_graph, state.params, layers=2)
            assert trainer.nc_step(state) == pytest.approx(expected, rel=1e-10)
        assert state.step == 5

    def test_resplit_redraws_a_stratified_split(self, small_nc):
        again = resplit_graph(small_nc, seed=5)
        for name in ("train", "valid", "test"):
            assert again.splits[name].size == small_nc.splits[name].size
        assert not np.array_equal(again.splits["train"], small_nc.splits["train"])
        np.testing.assert_array_equal(again.edges, small_nc.edges)
