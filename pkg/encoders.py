"""
GNN layers and the dual node/message propagation of SF-GNN

Every layer is split into a neighbor term (read from the message stream) and a self term
(read from the node stream or its gated copy). The node update is
σ(neighbor + self(H)) and the message update is σ(neighbor + self(g ⊙ H)), so a gate of 1
reproduces the node update bit for bit.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from autograd import Tape, Var
from errors import DatasetError, InvalidArgumentError, ParameterError, ShapeError
from graph_builder import DIRECTION_IN, DIRECTION_OUT, NeighborIndex
from rng import RngStream

logger = logging.getLogger(__name__)

ENCODERS = ("mean", "rgcn", "compgcn")
ACTIVATIONS = ("tanh", "relu", "identity")
COMPOSITIONS = ("sub", "mul")


def default_activation(encoder: str) -> str:
    return "tanh" if encoder == "compgcn" else "relu"


def glorot(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform((rows, cols), -limit, limit)


def activate(tape: Tape, x: Var, activation: str) -> Var:
    if activation == "tanh":
        return tape.tanh(x)
    if activation == "relu":
        return tape.relu(x)
    if activation == "identity":
        return x
    raise InvalidArgumentError(f"unknown activation {activation!r}")


def weighted_aggregate(tape: Tape, x: Var, src: np.ndarray, dst: np.ndarray,
                       weights: Optional[np.ndarray], num_nodes: int) -> Var:
    """out[v] = Σ_{entries e with dst[e]=v} weights[e] · x[src[e]]"""
    gathered = tape.gather(x, src)
    if weights is not None:
        scale = np.repeat(np.asarray(weights, dtype=np.float64).reshape(-1, 1), x.shape[1], axis=1)
        gathered = tape.mul(gathered, tape.constant(scale))
    return tape.segment_sum(gathered, dst, num_nodes)


@dataclass
class DualState:
    """Node stream H, message stream M and relation stream R at one layer"""
    H: Var
    M: Var
    R: Optional[Var] = None

    @property
    def num_nodes(self) -> int:
        return self.H.shape[0]


class GNNLayer:
    """Base class: parameter naming, lookup and the shared σ(neighbor + self) combine"""

    kind = "base"

    def __init__(self, index: NeighborIndex, prefix: str, dim: int, activation: str):
        if activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {activation!r}")
        self.index = index
        self.prefix = prefix
        self.dim = dim
        self.activation = activation

    def name(self, key: str) -> str:
        return f"{self.prefix}.{key}"

    def weight(self, params: Dict[str, Var], key: str) -> Var:
        name = self.name(key)
        if name not in params:
            raise ParameterError(f"{self.kind} layer is missing parameter {name}")
        return params[name]

    def init_params(self, rng: RngStream) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def neighbor_term(self, tape: Tape, params: Dict[str, Var], neigh: Var, rel: Optional[Var]) -> Var:
        raise NotImplementedError

    def self_term(self, tape: Tape, params: Dict[str, Var], own: Var, rel: Optional[Var]) -> Var:
        raise NotImplementedError

    def relation_update(self, tape: Tape, params: Dict[str, Var], rel: Optional[Var]) -> Optional[Var]:
        return rel

    def combine(self, tape: Tape, neighbor: Var, own: Var) -> Var:
        return activate(tape, tape.add(neighbor, own), self.activation)

    def apply(self, tape: Tape, params: Dict[str, Var], self_repr: Var, neigh_repr: Var,
              rel: Optional[Var] = None) -> Var:
        """One layer application with separate self and neighbor inputs"""
        if self_repr.shape != neigh_repr.shape:
            raise ShapeError(f"{self.kind}_layer", self_repr.shape, neigh_repr.shape)
        neighbor = self.neighbor_term(tape, params, neigh_repr, rel)
        return self.combine(tape, neighbor, self.self_term(tape, params, self_repr, rel))


class HomoMeanLayer(GNNLayer):
    """σ(W_self·h_v + W_neigh·mean_{u∈N_v} m_u); isolated nodes contribute a zero mean"""

    kind = "mean"

    def __init__(self, index: NeighborIndex, prefix: str, dim: int, activation: str = "relu"):
        super().__init__(index, prefix, dim, activation)
        degree = index.degree()
        self._inv_degree = 1.0 / np.maximum(degree, 1)

    def init_params(self, rng: RngStream) -> Dict[str, np.ndarray]:
        return {
            self.name("W_self"): glorot(rng, self.dim, self.dim),
            self.name("W_neigh"): glorot(rng, self.dim, self.dim),
        }

    def neighbor_term(self, tape, params, neigh, rel):
        idx = self.index
        weights = self._inv_degree[idx.dst]
        mean = weighted_aggregate(tape, neigh, idx.src, idx.dst, weights, idx.num_nodes)
        return tape.matmul(mean, self.weight(params, "W_neigh"))

    def self_term(self, tape, params, own, rel):
        return tape.matmul(own, self.weight(params, "W_self"))


class RGCNLayer(GNNLayer):
    """σ(Σ_r Σ_{(u,r)∈N_v} W_r·m_u / c_{v,r} + W_ent·h_v)

    c_{v,r} counts the entries of N_v carrying relation r, both directions included.
    One W_r per relation is shared by in and out entries.
    """

    kind = "rgcn"

    def __init__(self, index: NeighborIndex, prefix: str, dim: int, activation: str = "relu"):
        super().__init__(index, prefix, dim, activation)
        counts = np.zeros((index.num_nodes, index.num_relations), dtype=np.int64)
        np.add.at(counts, (index.dst, index.rel), 1)
        self._weights = 1.0 / counts[index.dst, index.rel]
        self._by_relation = [np.flatnonzero(index.rel == r) for r in range(index.num_relations)]

    def init_params(self, rng):
        params = {self.name("W_ent"): glorot(rng, self.dim, self.dim)}
        for r in range(self.index.num_relations):
            params[self.name(f"W_rel{r}")] = glorot(rng, self.dim, self.dim)
        return params

    def neighbor_term(self, tape, params, neigh, rel):
        idx = self.index
        total = None
        for r, entries in enumerate(self._by_relation):
            w_r = self.weight(params, f"W_rel{r}")
            if entries.size == 0:
                continue
            agg = weighted_aggregate(tape, neigh, idx.src[entries], idx.dst[entries],
                                     self._weights[entries], idx.num_nodes)
            term = tape.matmul(agg, w_r)
            total = term if total is None else tape.add(total, term)
        if total is None:
            return tape.constant(np.zeros((idx.num_nodes, self.dim)))
        return total

    def self_term(self, tape, params, own, rel):
        return tape.matmul(own, self.weight(params, "W_ent"))


class CompGCNLayer(GNNLayer):
    """σ(Σ_{(u,r)∈N_v} W_λ(r)·φ(m_u, h_r) + W_self·φ(h_v, h_loop)), then h_r' = W_rel·h_r"""

    kind = "compgcn"

    def __init__(self, index: NeighborIndex, prefix: str, dim: int, activation: str = "tanh",
                 composition: str = "sub"):
        super().__init__(index, prefix, dim, activation)
        if composition not in COMPOSITIONS:
            raise InvalidArgumentError(f"unknown composition {composition!r}; expected one of {COMPOSITIONS}")
        unknown = set(np.unique(index.direction).tolist()) - {DIRECTION_IN, DIRECTION_OUT}
        if unknown:
            raise DatasetError(f"unknown direction tag(s) {sorted(unknown)} in neighbor index")
        self.composition = composition
        self._by_direction = {
            "W_in": np.flatnonzero(index.direction == DIRECTION_IN),
            "W_out": np.flatnonzero(index.direction == DIRECTION_OUT),
        }

    def init_params(self, rng):
        d = self.dim
        return {
            self.name("W_in"): glorot(rng, d, d),
            self.name("W_out"): glorot(rng, d, d),
            self.name("W_self"): glorot(rng, d, d),
            self.name("W_rel"): glorot(rng, d, d),
            self.name("loop"): rng.uniform((1, d), -1.0 / np.sqrt(d), 1.0 / np.sqrt(d)),
        }

    def compose(self, tape: Tape, ent: Var, rel: Var) -> Var:
        if self.composition == "sub":
            return tape.sub(ent, rel)
        return tape.mul(ent, rel)

    def neighbor_term(self, tape, params, neigh, rel):
        if rel is None:
            raise ParameterError("compgcn layer needs relation representations")
        idx = self.index
        total = None
        for key, entries in self._by_direction.items():
            w = self.weight(params, key)
            if entries.size == 0:
                continue
            msg = self.compose(tape, tape.gather(neigh, idx.src[entries]), tape.gather(rel, idx.rel[entries]))
            term = tape.matmul(tape.segment_sum(msg, idx.dst[entries], idx.num_nodes), w)
            total = term if total is None else tape.add(total, term)
        if total is None:
            return tape.constant(np.zeros((idx.num_nodes, self.dim)))
        return total

    def self_term(self, tape, params, own, rel):
        loop = tape.gather(self.weight(params, "loop"), np.zeros(own.shape[0], dtype=np.int64))
        return tape.matmul(self.compose(tape, own, loop), self.weight(params, "W_self"))

    def relation_update(self, tape, params, rel):
        return tape.matmul(rel, self.weight(params, "W_rel"))


def build_layer(encoder: str, index: NeighborIndex, prefix: str, dim: int,
                activation: Optional[str] = None, composition: str = "sub") -> GNNLayer:
    activation = activation or default_activation(encoder)
    if encoder == "mean":
        return HomoMeanLayer(index, prefix, dim, activation)
    if encoder == "rgcn":
        return RGCNLayer(index, prefix, dim, activation)
    if encoder == "compgcn":
        return CompGCNLayer(index, prefix, dim, activation, composition)
    raise InvalidArgumentError(f"unknown encoder {encoder!r}; expected one of {ENCODERS}")


def gate_rows(tape: Tape, x: Var, gates: Var) -> Var:
    """Row-wise g ⊙ x for an n x 1 gate column"""
    if gates.shape != (x.shape[0], 1):
        raise ShapeError("gate", gates.shape, (x.shape[0], 1))
    spread = tape.matmul(gates, tape.constant(np.ones((1, x.shape[1]))))
    return tape.mul(x, spread)


def dual_propagate(tape: Tape, layer: GNNLayer, params: Dict[str, Var], state: DualState,
                   gates: Optional[Var]) -> DualState:
    """H' = f(self=H, neigh=M); M' = f(self=g ⊙ H, neigh=M) with shared parameters

    `gates=None` is the base variant: the message stream is the node stream.
    """
    neighbor = layer.neighbor_term(tape, params, state.M, state.R)
    h_next = layer.combine(tape, neighbor, layer.self_term(tape, params, state.H, state.R))
    if gates is None:
        m_next = h_next
    else:
        gated = gate_rows(tape, state.H, gates)
        m_next = layer.combine(tape, neighbor, layer.self_term(tape, params, gated, state.R))
    return DualState(h_next, m_next, layer.relation_update(tape, params, state.R))


def embedding_params(dim: int, num_nodes: int, num_relations: int, rng: RngStream, mode: str,
                     feature_dim: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Layer-0 parameters: entity table (kg) or feature projection W0 (nc), plus relations"""
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    params = {}
    if mode == "kg":
        params["emb.entity"] = rng.normal((num_nodes, dim), scale=1.0 / np.sqrt(dim))
    elif mode == "nc":
        if not feature_dim:
            raise InvalidArgumentError("nc mode needs feature_dim")
        params["emb.proj"] = glorot(rng, feature_dim, dim)
    else:
        raise InvalidArgumentError(f"mode must be 'kg' or 'nc', got {mode!r}")
    if num_relations:
        bound = 1.0 / np.sqrt(dim)
        params["emb.relation"] = rng.uniform((num_relations, dim), -bound, bound)
    return params


def init_representations(tape: Tape, params: Dict[str, Var], mode: str,
                         features: Optional[np.ndarray] = None) -> DualState:
    """Layer-0 state: H0 is the entity table or W0·X, M0 is H0, R0 the relation table"""
    if mode == "kg":
        h0 = params["emb.entity"]
    else:
        h0 = tape.matmul(tape.constant(features), params["emb.proj"])
    return DualState(h0, h0, params.get("emb.relation"))
