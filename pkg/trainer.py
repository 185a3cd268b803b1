"""
Training loop for selfgate
Composes dataset -> encoders -> self-filter -> decoder -> loss -> Adam, tracks the best
validation metric and writes checkpoints and the JSON-lines metric log
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from autograd import Tape
from config import RunConfig
from decoders import bce_loss, ce_loss, score_batch
from errors import DivergenceError, NonFiniteError
from evaluator import evaluate_link_prediction, evaluate_node_classification
from graph_builder import GraphBuilder, HomogeneousGraph, KnowledgeGraph, sample_negatives
from ingest import load_dataset
from model import LINK_PREDICTION, SFGNNModel
from optimizer import OptimizerState, adam_step, clip_by_global_norm, linear_decay_lr
from rng import RngStream
from storage import Checkpoint, save_checkpoint
from synthetic import stratified_split

logger = logging.getLogger(__name__)

Graph = Union[HomogeneousGraph, KnowledgeGraph]
LAST_GOOD = "last_good.ckpt"


@dataclass
class TrainState:
    """Everything that changes from step to step"""
    params: Dict[str, np.ndarray]
    optimizer: OptimizerState
    rng: RngStream
    total_steps: int
    epoch: int = 0
    step: int = 0
    best_metric: Optional[float] = None
    best_epoch: int = 0
    best_params: Optional[Dict[str, np.ndarray]] = None
    history: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[Dict[str, Any]]
    model: SFGNNModel
    graph: Graph
    checkpoint_path: Optional[str] = None


def resplit_graph(graph: HomogeneousGraph, seed: int) -> HomogeneousGraph:
    """Redraw the stratified 60/20/20 split from `seed`"""
    splits = stratified_split(graph.labels, RngStream(seed, "resplit"))
    return GraphBuilder().build_homogeneous(graph.features, graph.labels, graph.num_classes,
                                            graph.edges, splits)


def prepare_graph(config: RunConfig, graph: Optional[Graph] = None) -> Graph:
    if graph is None:
        graph = load_dataset(config.data.path)
    if config.data.resplit:
        if isinstance(graph, HomogeneousGraph):
            graph = resplit_graph(graph, config.train.seed)
        else:
            logger.warning("data.resplit only applies to node-classification datasets; ignored")
    return graph


class Trainer:
    """Runs one configuration end to end"""

    def __init__(self, config: RunConfig, graph: Optional[Graph] = None, show_progress: bool = False):
        self.config = config
        self.graph = prepare_graph(config, graph)
        self.model = SFGNNModel(config.model, config.gate, self.graph)
        self.show_progress = show_progress
        self.root = RngStream(config.train.seed)

    @property
    def is_link_prediction(self) -> bool:
        return self.model.task == LINK_PREDICTION

    def steps_per_epoch(self) -> int:
        if self.is_link_prediction:
            return max(1, math.ceil(self.graph.train.shape[0] / self.config.train.batch_size))
        return 1

    def init_state(self) -> TrainState:
        params = self.model.init_params(self.root)
        total = self.config.train.epochs * self.steps_per_epoch()
        return TrainState(
            params=params,
            optimizer=OptimizerState.for_params(params, self.config.train.lr),
            rng=self.root.substream("train"),
            total_steps=total,
        )

    def tau_at(self, step: int, total: int) -> float:
        gate = self.config.gate
        if gate.tau_final is None:
            return gate.tau
        return gate.tau + (gate.tau_final - gate.tau) * step / total

    # Steps

    def _apply(self, state: TrainState, grads: Dict[str, np.ndarray]) -> float:
        grads, _ = clip_by_global_norm(grads, self.config.train.clip_norm)
        lr = linear_decay_lr(state.step, state.total_steps, state.optimizer.base_lr)
        state.params, state.optimizer = adam_step(state.params, grads, state.optimizer, lr)
        state.step += 1
        return lr

    def kg_step(self, state: TrainState, positives: np.ndarray) -> float:
        kg = self.graph
        batch = sample_negatives(positives, self.config.train.negatives, kg.num_entities, state.rng)
        tape = Tape()
        result = self.model.forward(tape, state.params, mode="train", rng=state.rng,
                                    tau=self.tau_at(state.step, state.total_steps),
                                    pin=self.config.gate.pin)
        scores = score_batch(tape, self.model.config.decoder, result.H, result.R, batch.triples)
        loss = bce_loss(tape, scores, batch.labels)
        grads = tape.backward(loss)
        self._apply(state, grads)
        return float(loss.value[0, 0])

    def nc_step(self, state: TrainState) -> float:
        graph = self.graph
        tape = Tape()
        result = self.model.forward(tape, state.params, mode="train", rng=state.rng,
                                    tau=self.tau_at(state.step, state.total_steps),
                                    pin=self.config.gate.pin)
        loss = ce_loss(tape, self.model.logits(tape, result), graph.labels, graph.splits["train"])
        grads = tape.backward(loss)
        self._apply(state, grads)
        return float(loss.value[0, 0])

    def train_epoch(self, state: TrainState) -> float:
        """One pass over the training data; returns the mean step loss"""
        losses = []
        if self.is_link_prediction:
            train = self.graph.train
            order = state.rng.permutation(train.shape[0])
            size = self.config.train.batch_size
            for start in range(0, train.shape[0], size):
                losses.append(self.kg_step(state, train[order[start:start + size]]))
        else:
            losses.append(self.nc_step(state))
        return float(np.mean(losses))

    def validate(self, params: Dict[str, np.ndarray]) -> Optional[float]:
        """Validation MRR (link prediction) or accuracy (node classification)"""
        seed = self.config.train.seed
        if self.is_link_prediction:
            if self.graph.valid.shape[0] == 0:
                return None
            _, report, _ = evaluate_link_prediction(self.model, params, self.graph, "valid", seed)
            return report.mrr
        return evaluate_node_classification(self.model, params, self.graph, "valid", seed)

    # Checkpoints

    def make_checkpoint(self, state: TrainState, params: Dict[str, np.ndarray], epoch: int) -> Checkpoint:
        trace = None
        if self.model.gated:
            tape = Tape()
            result = self.model.forward(tape, params, mode="eval",
                                        rng=RngStream(self.config.train.seed, "eval"))
            trace = result.trace.matrix()
        return Checkpoint(
            params={name: value.copy() for name, value in params.items()},
            config=self.config.to_dict(),
            rng_state=state.rng.state_dict(),
            epoch=epoch,
            best_metric=state.best_metric,
            gate_trace=trace,
        )

    def _diverged(self, state: TrainState, last_good: Dict[str, np.ndarray], write: bool) -> DivergenceError:
        path = None
        if write:
            path = self.config.output.path(LAST_GOOD)
            save_checkpoint(self.make_checkpoint(state, last_good, state.epoch), path)
        return DivergenceError(state.epoch, state.step, path)

    # Main loop

    def fit(self, write: bool = True) -> TrainResult:
        """Train for the configured epochs and keep the parameters with the best validation metric"""
        cfg = self.config
        state = self.init_state()
        if write:
            os.makedirs(cfg.output.dir, exist_ok=True)
        log_file = open(cfg.output.path(cfg.output.metrics), "w", encoding="utf-8", newline="\n") if write else None
        logger.info("Training %s/%s %s, %d layers, %d epochs (%d steps)",
                    cfg.model.encoder, cfg.model.decoder, cfg.model.variant, cfg.model.layers,
                    cfg.train.epochs, state.total_steps)
        try:
            epochs = tqdm(range(1, cfg.train.epochs + 1), desc="epochs", disable=not self.show_progress)
            for epoch in epochs:
                state.epoch = epoch
                last_good = state.params
                # rate of the epoch's first step; it decays after every step
                lr = linear_decay_lr(state.step, state.total_steps, cfg.train.lr)
                metric = None
                try:
                    loss = self.train_epoch(state)
                    if not math.isfinite(loss):
                        raise NonFiniteError("loss", f"epoch {epoch} mean loss is {loss}")
                    if epoch % cfg.train.eval_every == 0 or epoch == cfg.train.epochs:
                        metric = self.validate(state.params)
                except NonFiniteError as exc:
                    logger.error("Training diverged: %s", exc)
                    raise self._diverged(state, last_good, write)

                if metric is not None:
                    if state.best_metric is None or metric > state.best_metric:
                        state.best_metric = metric
                        state.best_epoch = epoch
                        state.best_params = state.params

                record = {"epoch": epoch, "loss": loss, "valid_metric": metric, "lr": lr}
                state.history.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record, sort_keys=True) + "\n")
                logger.info("epoch %d loss %.6f valid %s lr %.6g", epoch, loss,
                            "n/a" if metric is None else f"{metric:.4f}", lr)
        finally:
            if log_file is not None:
                log_file.close()

        if state.best_params is None:
            state.best_params, state.best_epoch = state.params, state.epoch
        checkpoint = self.make_checkpoint(state, state.best_params, state.best_epoch)
        path = None
        if write:
            path = cfg.output.path(cfg.output.checkpoint)
            save_checkpoint(checkpoint, path)
        return TrainResult(checkpoint, state.history, self.model, self.graph, path)


def train(config: RunConfig, graph: Optional[Graph] = None, write: bool = True,
          show_progress: bool = False) -> TrainResult:
    config.validate(require_data=graph is None)
    return Trainer(config, graph, show_progress).fit(write)


def model_from_checkpoint(checkpoint: Checkpoint, graph: Optional[Graph] = None):
    """Rebuild the model a checkpoint was trained with; returns (model, graph, config)"""
    config = RunConfig.from_dict(checkpoint.config)
    graph = prepare_graph(config, graph)
    return SFGNNModel(config.model, config.gate, graph), graph, config
