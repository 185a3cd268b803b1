"""
SF-GNN model: parameter registry plus the full dual-stream forward pass
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from autograd import Tape, Var
from config import GateConfig, ModelConfig
from decoders import ClassifierHead
from encoders import DualState, GNNLayer, build_layer, dual_propagate, embedding_params, init_representations
from errors import ConfigError
from graph_builder import HomogeneousGraph, KnowledgeGraph
from rng import RngStream
from self_filter import (DEFAULT_GATE_WEIGHT, RAW_GATE_WEIGHT, GateParams, GateTrace, RelatedSample, gate,
                         needs_sampling, pinned_gates, quality_kg, quality_nc, resolve_quality_mode,
                         sample_related)

logger = logging.getLogger(__name__)

Graph = Union[HomogeneousGraph, KnowledgeGraph]
Params = Dict[str, np.ndarray]

LINK_PREDICTION = "link-prediction"
NODE_CLASSIFICATION = "node-classification"


@dataclass
class ForwardResult:
    """Final node stream H, the relation table the decoder reads, and the gate record"""
    H: Var
    R: Optional[Var]
    params: Dict[str, Var]
    trace: Optional[GateTrace] = None
    qualities: List[np.ndarray] = field(default_factory=list)


def task_for(graph: Graph) -> str:
    return LINK_PREDICTION if isinstance(graph, KnowledgeGraph) else NODE_CLASSIFICATION


class SFGNNModel:
    """Encoder stack with optional self-filter gates and a task decoder"""

    def __init__(self, model_config: ModelConfig, gate_config: GateConfig, graph: Graph):
        self.config = model_config
        self.gate_config = gate_config
        self.graph = graph
        self.task = task_for(graph)
        if model_config.task not in ("auto", self.task):
            raise ConfigError("model.task", f"configured {model_config.task} but the dataset is for {self.task}")

        index = graph.neighbors
        activation = None if model_config.activation == "auto" else model_config.activation
        self.layers: List[GNNLayer] = [
            build_layer(model_config.encoder, index, f"layer{l}", model_config.dim,
                        activation, model_config.composition)
            for l in range(model_config.layers)
        ]
        self.gate_params = GateParams(
            layers=model_config.layers,
            tau=gate_config.tau,
            eval_policy=gate_config.eval_policy,
            detach_quality=gate_config.detach_quality,
            quality_mode=resolve_quality_mode(gate_config.quality_mode, self.task == LINK_PREDICTION,
                                              model_config.decoder),
            true_class_on_train=gate_config.true_class_on_train,
            cap=gate_config.cap,
            hard=gate_config.hard,
        )
        self.head: Optional[ClassifierHead] = None
        self._fixed_sample: Optional[RelatedSample] = None
        if self.task == NODE_CLASSIFICATION:
            self.head = ClassifierHead(model_config.dim, graph.num_classes)
            self.num_relations = 1 if model_config.encoder == "compgcn" else 0
        else:
            self.num_relations = graph.num_relations
            if not needs_sampling(graph, gate_config.cap):
                self._fixed_sample = sample_related(graph, gate_config.cap, None)

    @property
    def gated(self) -> bool:
        return self.config.variant == "sfgnn"

    @property
    def initial_gate_weight(self) -> float:
        if self.gate_config.w_init is not None:
            return float(self.gate_config.w_init)
        if self.task == LINK_PREDICTION and self.gate_params.quality_mode == "raw":
            return RAW_GATE_WEIGHT
        return DEFAULT_GATE_WEIGHT

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def init_params(self, rng: RngStream) -> Params:
        """Fresh parameters drawn from the `init` substream of `rng`"""
        init = rng.substream("init")
        graph = self.graph
        if self.task == LINK_PREDICTION:
            params = embedding_params(self.config.dim, graph.num_entities, self.num_relations, init, "kg")
        else:
            params = embedding_params(self.config.dim, graph.num_nodes, self.num_relations, init, "nc",
                                      feature_dim=graph.features.shape[1])
        for layer in self.layers:
            params.update(layer.init_params(init))
        if self.gated:
            for l in range(self.num_layers):
                params[GateParams.weight_name(l)] = np.array([[self.initial_gate_weight]])
        if self.head is not None:
            params.update(self.head.init_params(init))
        return params

    def quality(self, tape: Tape, params: Dict[str, Var], state: DualState,
                rng: Optional[RngStream]) -> Var:
        gp = self.gate_params
        if self.task == NODE_CLASSIFICATION:
            labels = train_nodes = None
            if gp.true_class_on_train:
                labels, train_nodes = self.graph.labels, self.graph.splits["train"]
            return quality_nc(tape, state.H, self.head, params, gp.detach_quality, labels, train_nodes)
        sample = self._fixed_sample
        if sample is None:
            sample = sample_related(self.graph, gp.cap, rng)
        relations = tape.detach(state.R) if gp.detach_quality else state.R
        return quality_kg(tape, state.H, relations, self.graph, self.config.decoder, sample, gp.quality_mode)

    def forward(self, tape: Tape, params: Params, mode: str = "train", rng: Optional[RngStream] = None,
                tau: Optional[float] = None, pin: Optional[int] = None) -> ForwardResult:
        """Register `params` on `tape` and run all layers

        `pin` fixes every gate to 0 or 1 and skips quality scoring. The base variant
        ignores gates entirely and propagates a single stream.
        """
        registered = {name: tape.param(name, value) for name, value in sorted(params.items())}
        mode_key = "kg" if self.task == LINK_PREDICTION else "nc"
        features = None if self.task == LINK_PREDICTION else self.graph.features
        state = init_representations(tape, registered, mode_key, features)

        trace = GateTrace() if self.gated else None
        qualities: List[np.ndarray] = []
        for l, layer in enumerate(self.layers):
            gates = None
            if self.gated:
                if pin is not None:
                    gates, _ = pinned_gates(tape, state.num_nodes, pin)
                else:
                    qual = self.quality(tape, registered, state, rng)
                    qualities.append(qual.value.ravel().copy())
                    gates = gate(tape, qual, registered[GateParams.weight_name(l)], self.gate_params,
                                 mode, rng, tau)
                trace.record(gates.value)
            state = dual_propagate(tape, layer, registered, state, gates)

        return ForwardResult(state.H, state.R, registered, trace, qualities)

    def logits(self, tape: Tape, result: ForwardResult) -> Var:
        """Classifier logits on the final node stream (node classification)"""
        return self.head.logits(tape, result.params, result.H)
