import numpy as np
import pytest

from autograd import Tape
from config import GateConfig, ModelConfig
from decoders import bce_loss, ce_loss, score_batch
from errors import ConfigError
from model import LINK_PREDICTION, NODE_CLASSIFICATION, SFGNNModel, task_for
from rng import RngStream
from self_filter import DEFAULT_GATE_WEIGHT, RAW_GATE_WEIGHT

TRIPLES = np.array([[0, 0, 1], [1, 0, 2], [2, 1, 3], [5, 1, 0], [3, 0, 4], [4, 1, 2]])
LABELS = np.array([1, 1, 1, 0, 0, 0])


def kg_model(graph, encoder="compgcn", variant="sfgnn", layers=2, decoder="distmult", **gate):
    config = ModelConfig(encoder=encoder, decoder=decoder, layers=layers, dim=3, variant=variant,
                         activation="tanh")
    return SFGNNModel(config, GateConfig(**{"quality_mode": "sigmoid", **gate}), graph)


def kg_loss(model, params):
    tape = Tape()
    result = model.forward(tape, params, mode="eval", rng=RngStream(0, "eval"))
    scores = score_batch(tape, "distmult", result.H, result.R, TRIPLES)
    return tape, bce_loss(tape, scores, LABELS)


def kg_train_loss(model, params, seed=7):
    """Train-mode loss; a fresh stream per call replays the same Gumbel noise"""
    tape = Tape()
    result = model.forward(tape, params, mode="train", rng=RngStream(seed))
    scores = score_batch(tape, model.config.decoder, result.H, result.R, TRIPLES)
    return tape, bce_loss(tape, scores, LABELS)


class TestGradients:
    @pytest.mark.parametrize("encoder", ["rgcn", "compgcn"])
    def test_two_layer_link_prediction_matches_finite_differences(self, tiny_kg, grad_check, encoder):
        model = kg_model(tiny_kg, encoder)
        params = model.init_params(RngStream(1))
        tape, loss = kg_loss(model, params)
        analytic = tape.backward(loss)
        assert not analytic["gate.w0"].any()
        grad_check(lambda p: float(kg_loss(model, p)[1].value[0, 0]), params, analytic, eps=1e-6)

    def test_two_layer_node_classification_matches_finite_differences(self, tiny_graph, grad_check):
        config = ModelConfig(encoder="mean", layers=2, dim=3, variant="sfgnn", activation="tanh")
        model = SFGNNModel(config, GateConfig(), tiny_graph)
        params = model.init_params(RngStream(2))

        def loss_of(p):
            tape = Tape()
            result = model.forward(tape, p, mode="eval", rng=RngStream(0, "eval"))
            logits = model.logits(tape, result)
            return tape, ce_loss(tape, logits, tiny_graph.labels, tiny_graph.splits["train"])

        tape, loss = loss_of(params)
        grad_check(lambda p: float(loss_of(p)[1].value[0, 0]), params, tape.backward(loss), eps=1e-6)

    @pytest.mark.parametrize("encoder,quality_mode", [("compgcn", "raw"), ("rgcn", "sigmoid")])
    def test_relaxed_train_gates_match_finite_differences(self, tiny_kg, grad_check, encoder, quality_mode):
        model = kg_model(tiny_kg, encoder, quality_mode=quality_mode, hard=False)
        params = model.init_params(RngStream(11))
        tape, loss = kg_train_loss(model, params)
        analytic = tape.backward(loss)
        assert analytic["gate.w0"].any()
        grad_check(lambda p: float(kg_train_loss(model, p)[1].value[0, 0]), params, analytic, eps=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_hard_train_gates_pass_gradient_to_inner_gate_weights(self, tiny_kg, seed):
        model = kg_model(tiny_kg, quality_mode="auto")
        params = model.init_params(RngStream(seed))
        tape, loss = kg_train_loss(model, params, seed=seed)
        grads = tape.backward(loss)
        assert grads["gate.w0"].any()
        # the last gate only feeds the unread M stream
        assert not grads["gate.w1"].any()


class TestForward:
    def test_open_gates_reproduce_the_base_model_bitwise(self, tiny_kg):
        gated = kg_model(tiny_kg)
        base = kg_model(tiny_kg, variant="base")
        params = gated.init_params(RngStream(3))
        base_params = {k: v for k, v in params.items() if not k.startswith("gate.")}
        assert base_params.keys() == base.init_params(RngStream(3)).keys()

        pinned = gated.forward(Tape(), params, mode="eval", pin=1)
        plain = base.forward(Tape(), base_params, mode="eval")
        np.testing.assert_array_equal(pinned.H.value, plain.H.value)
        np.testing.assert_array_equal(pinned.R.value, plain.R.value)
        assert plain.trace is None
        # w = 1 and sigmoid qualities are positive, so every deterministic gate opens
        evaluated = gated.forward(Tape(), params, mode="eval", rng=RngStream(0, "eval"))
        assert evaluated.trace.matrix().all()
        np.testing.assert_array_equal(evaluated.H.value, plain.H.value)

    def test_closed_gates_change_deeper_layers(self, tiny_kg):
        model = kg_model(tiny_kg)
        params = model.init_params(RngStream(4))
        closed = model.forward(Tape(), params, mode="eval", pin=0)
        opened = model.forward(Tape(), params, mode="eval", pin=1)
        assert not np.array_equal(closed.H.value, opened.H.value)
        assert not closed.trace.matrix().any()

    def test_negative_gate_weight_closes_every_gate(self, tiny_kg):
        model = kg_model(tiny_kg, w_init=-1.0)
        result = model.forward(Tape(), model.init_params(RngStream(5)), mode="eval", rng=RngStream(0, "eval"))
        assert result.trace.matrix().shape == (2, 6)
        assert not result.trace.matrix().any()
        assert len(result.qualities) == 2

    def test_train_mode_samples_gates(self, tiny_kg):
        model = kg_model(tiny_kg, w_init=0.0)
        params = model.init_params(RngStream(6))
        bits = model.forward(Tape(), params, mode="train", rng=RngStream(7)).trace.matrix()
        assert set(np.unique(bits).tolist()) <= {0, 1}
        again = model.forward(Tape(), params, mode="train", rng=RngStream(7)).trace.matrix()
        np.testing.assert_array_equal(bits, again)

    def test_auto_quality_is_raw_for_distmult(self, tiny_kg):
        model = kg_model(tiny_kg, quality_mode="auto")
        assert model.gate_params.quality_mode == "raw"
        params = model.init_params(RngStream(12))
        assert params["gate.w0"].tolist() == [[RAW_GATE_WEIGHT]]
        result = model.forward(Tape(), params, mode="eval", rng=RngStream(0, "eval"))
        for bits, qual in zip(result.trace.matrix(), result.qualities):
            np.testing.assert_array_equal(bits, (qual >= 0).astype(np.int8))

    def test_auto_quality_is_sigmoid_for_transe_and_node_classification(self, tiny_kg, tiny_graph):
        model = kg_model(tiny_kg, decoder="transe", quality_mode="auto")
        assert model.gate_params.quality_mode == "sigmoid"
        assert model.init_params(RngStream(13))["gate.w0"].tolist() == [[DEFAULT_GATE_WEIGHT]]
        nc = SFGNNModel(ModelConfig(encoder="mean", dim=3), GateConfig(), tiny_graph)
        assert nc.gate_params.quality_mode == "sigmoid"
        assert nc.init_params(RngStream(13))["gate.w1"].tolist() == [[DEFAULT_GATE_WEIGHT]]

    def test_explicit_gate_weight_wins_over_auto(self, tiny_kg):
        model = kg_model(tiny_kg, quality_mode="auto", w_init=2.0)
        assert model.init_params(RngStream(14))["gate.w0"].tolist() == [[2.0]]

    def test_capped_quality_samples_each_forward(self, tiny_kg):
        model = kg_model(tiny_kg, cap=1)
        params = model.init_params(RngStream(8))
        result = model.forward(Tape(), params, mode="eval", rng=RngStream(0, "eval"))
        assert result.trace.layers == 2


class TestParameters:
    def test_init_is_deterministic_and_complete(self, tiny_kg):
        model = kg_model(tiny_kg, w_init=0.5)
        a, b = model.init_params(RngStream(9)), model.init_params(RngStream(9))
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        assert a["gate.w0"].tolist() == [[0.5]] and a["gate.w1"].tolist() == [[0.5]]
        assert a["emb.entity"].shape == (6, 3) and a["emb.relation"].shape == (2, 3)
        assert "layer1.W_rel" in a

    def test_node_classification_parameters(self, tiny_graph):
        model = SFGNNModel(ModelConfig(encoder="mean", dim=4, variant="base"), GateConfig(), tiny_graph)
        params = model.init_params(RngStream(0))
        assert params["emb.proj"].shape == (3, 4)
        assert params["clf.W2"].shape == (4, 2)
        assert not any(name.startswith("gate.") for name in params)
        assert model.task == NODE_CLASSIFICATION

    def test_task_mismatch(self, tiny_kg, tiny_graph):
        assert task_for(tiny_kg) == LINK_PREDICTION
        with pytest.raises(ConfigError):
            SFGNNModel(ModelConfig(task="node-classification"), GateConfig(), tiny_kg)
        with pytest.raises(ConfigError):
            SFGNNModel(ModelConfig(task="link-prediction", encoder="mean"), GateConfig(), tiny_graph)
