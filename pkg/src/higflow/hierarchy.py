"""The hierarchical graph-flow forecaster: embedding, coarsening, lifting, memory buffer, readout."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .analysis import dirichlet_energy, mae, rmse
from .graph import (AttentionParams, ClusterAssignment, SpatioTemporalGraph,
                    attention_weights, coarsen, graclus, truncate)
from .numerics import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "higflow-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    n_vars: int
    t_in: int = 3
    t_out: int = 12
    hidden: int = 16
    heads: int = 4
    depth: int = 2
    tau: float = 0.02
    transition_depth: int = 2
    readout_hidden: int = 64
    embed_domain_shift: bool = True
    lift_domain_shift: bool = True
    naive_encoding: bool = True
    seed: int = 0

    @property
    def num_nodes(self) -> int:
        return self.n_vars * self.t_in


class SpatialMLP:
    """MLP acting along the node axis: ``X <- W[:n, :n] @ X + b[:n]`` per layer.

    Weights are allocated for the largest possible level width and sliced to
    the current node count. Hidden layers use ReLU; the last layer is linear.
    Biases start at zero: a per-node bias is shared by all feature columns, so a
    negative draw would silence that node's whole row under ReLU.
    """

    def __init__(self, rng, width: int, layers: int, prefix: str):
        self.width = width
        self.weights = [nm.init_uniform(rng, (width, width), width, f"{prefix}.layer{i}.weight")
                        for i in range(layers)]
        self.biases = [nm.zeros_param((width,), f"{prefix}.layer{i}.bias")
                       for i in range(layers)]

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        gain = _slice_gain(self.width, n)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = nm.matmul(w[:n, :n] * gain, x) + nm.reshape(b[:n] * gain, (n, 1))
            if i < len(self.weights) - 1:
                x = nm.relu(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    def set_identity(self, n: int) -> None:
        """Make the map the identity on inputs with ``n`` rows."""
        for w, b in zip(self.weights, self.biases):
            w.data = np.eye(w.shape[0]) / _slice_gain(self.width, n)
            b.data = np.zeros(b.shape)


@dataclass
class EmbeddingMapParams:
    mlp: SpatialMLP
    shift: Tensor  # W_e, width x width

    def parameters(self):
        return [*self.mlp.parameters(), self.shift]


@dataclass
class LiftingMapParams:
    mlp: SpatialMLP
    shift: Tensor    # W_l, width x width
    encoder: Tensor  # L_gamma, fine width x coarse width (sliced)

    def parameters(self):
        return [*self.mlp.parameters(), self.shift, self.encoder]


@dataclass
class MemoryBlockParams:
    w_self: Tensor  # 2D x D
    w_nbr: Tensor   # 2D x D
    bias: Tensor    # D

    def parameters(self):
        return [self.w_self, self.w_nbr, self.bias]


@dataclass
class LevelParams:
    attention: AttentionParams
    memory: MemoryBlockParams
    embed: EmbeddingMapParams | None = None  # maps level i-1 -> i
    lift: LiftingMapParams | None = None     # maps level i+1 -> i

    def parameters(self):
        out = self.attention.parameters() + self.memory.parameters()
        if self.embed is not None:
            out += self.embed.parameters()
        if self.lift is not None:
            out += self.lift.parameters()
        return out


@dataclass
class LevelState:
    h: Tensor
    graph: SpatioTemporalGraph
    assignment: ClusterAssignment | None = None  # this level -> next coarser
    u: Tensor | None = None
    y: Tensor | None = None


def _slice_gain(width: int, n: int) -> float:
    # rescales a slice of a width-sized U(+-1/sqrt(width)) matrix to U(+-1/sqrt(n))
    return float(np.sqrt(width / n))


def _node_index(n: int) -> np.ndarray:
    # (1..n)/n keeps the shift on the scale of tanh-bounded features
    return np.arange(1, n + 1, dtype=np.float64) / n


def _node_shift(w: Tensor, n: int) -> Tensor:
    """One scalar per node, ``W[:n, :n]^T v`` with ``v = (1..n)/n``, as an n x 1 column."""
    wn = w[:n, :n] * _slice_gain(w.shape[0], n)
    return nm.matmul(nm.transpose(wn), _node_index(n).reshape(n, 1))


def embed_level(h: Tensor, assignment: ClusterAssignment, params: EmbeddingMapParams,
                domain_shift: bool = True) -> Tensor:
    """Sum member rows per clique, add the node shift, apply the spatial MLP."""
    h = nm.as_tensor(h)
    if len(assignment.cluster_of) != h.shape[0]:
        raise nm.ShapeError(f"assignment covers {len(assignment.cluster_of)} nodes, features have {h.shape[0]}")
    hbar = nm.matmul(assignment.pooling_matrix(), h)
    if domain_shift:
        hbar = hbar + _node_shift(params.shift, assignment.num_clusters)
    return params.mlp(hbar)


def lift_level(y_coarse: Tensor, assignment: ClusterAssignment, params: LiftingMapParams,
               domain_shift: bool = True, naive_encoding: bool = True) -> Tensor:
    """Broadcast coarse memory rows back to member nodes and map them to the fine level."""
    y_coarse = nm.as_tensor(y_coarse)
    nc, nf = assignment.num_clusters, len(assignment.cluster_of)
    if y_coarse.shape[0] != nc:
        raise nm.ShapeError(f"coarse memory has {y_coarse.shape[0]} rows for {nc} cliques")
    z = nm.matmul(assignment.pooling_matrix().T, y_coarse)
    if domain_shift:
        z = z + _node_shift(params.shift, nf)
    u = params.mlp(z)
    if naive_encoding:
        enc = params.encoder[:nf, :nc] * _slice_gain(params.encoder.shape[1], nc)
        u = u + nm.matmul(enc, y_coarse)
    return u


def memory_update(h: Tensor, u: Tensor, graph: SpatioTemporalGraph, params: MemoryBlockParams) -> Tensor:
    """One round of 1-hop message passing over ``z = h || u``.

    Each node averages its neighbours' edge-weighted rows ``w_ij z_j`` over its
    (unweighted) neighbour count, concatenates the result with its own row and
    applies ``tanh(z W_self + agg W_nbr + b)``. Isolated nodes aggregate zero.
    """
    h, u = nm.as_tensor(h), nm.as_tensor(u)
    if h.shape != u.shape:
        raise nm.ShapeError(f"h {h.shape} and u {u.shape} differ")
    if graph.num_nodes != h.shape[0]:
        raise nm.ShapeError(f"graph has {graph.num_nodes} nodes, features have {h.shape[0]}")
    z = nm.concat_features(h, u)
    w = nm.as_tensor(graph.weights)
    count = (w.data > 0).sum(axis=1, keepdims=True).astype(np.float64)
    agg = nm.matmul(w * (1.0 / np.maximum(count, 1.0)), z)
    return nm.tanh(nm.matmul(z, params.w_self) + nm.matmul(agg, params.w_nbr) + params.bias)


class HiGFlowModel:
    def __init__(self, config: ModelConfig):
        self.config = c = config
        if c.depth < 1:
            raise ValueError("depth must be >= 1")
        if c.transition_depth not in (1, 2, 3):
            raise ValueError("transition_depth must be 1, 2 or 3")
        rng = np.random.default_rng(c.seed)
        d, n = c.hidden, c.num_nodes
        self.w_e = nm.init_uniform(rng, (1, d), 1, "embed.weight")
        self.b_e = nm.init_uniform(rng, (d,), 1, "embed.bias")
        self.levels: list[LevelParams] = []
        for i in range(c.depth):
            p = f"level{i}"
            lv = LevelParams(
                attention=AttentionParams.init(rng, d, c.heads, f"{p}.attention"),
                memory=MemoryBlockParams(
                    nm.init_uniform(rng, (2 * d, d), 4 * d, f"{p}.memory.w_self"),
                    nm.init_uniform(rng, (2 * d, d), 4 * d, f"{p}.memory.w_nbr"),
                    nm.init_uniform(rng, (d,), 4 * d, f"{p}.memory.bias")),
            )
            if i > 0:
                lv.embed = EmbeddingMapParams(
                    SpatialMLP(rng, n, c.transition_depth, f"{p}.embed"),
                    nm.init_uniform(rng, (n, n), n, f"{p}.embed.shift"))
            if i < c.depth - 1:
                lv.lift = LiftingMapParams(
                    SpatialMLP(rng, n, c.transition_depth, f"{p}.lift"),
                    nm.init_uniform(rng, (n, n), n, f"{p}.lift.shift"),
                    nm.init_uniform(rng, (n, n), n, f"{p}.lift.encoder"))
            self.levels.append(lv)
        fan = c.t_in * d
        self.r_w1 = nm.init_uniform(rng, (fan, c.readout_hidden), fan, "readout.w1")
        self.r_b1 = nm.init_uniform(rng, (c.readout_hidden,), fan, "readout.b1")
        self.r_w2 = nm.init_uniform(rng, (c.readout_hidden, c.t_out), c.readout_hidden, "readout.w2")
        self.r_b2 = nm.init_uniform(rng, (c.t_out,), c.readout_hidden, "readout.b2")
        self.freeze_clusters = False
        self._cluster_cache: dict = {}

    # ------------------------------------------------------------ parameters

    def parameters(self) -> list[Tensor]:
        out = [self.w_e, self.b_e]
        for lv in self.levels:
            out += lv.parameters()
        out += [self.r_w1, self.r_b1, self.r_w2, self.r_b2]
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def lifting_parameters(self) -> list[Tensor]:
        return [p for lv in self.levels if lv.lift is not None for p in lv.lift.parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        expected = {k: p.shape for k, p in params.items()}
        found = {k: tuple(np.shape(v)) for k, v in state.items()}
        if expected != found:
            missing = sorted(set(expected) - set(found))
            extra = sorted(set(found) - set(expected))
            bad = sorted(k for k in set(expected) & set(found) if expected[k] != found[k])
            raise CheckpointError(
                "checkpoint incompatible with config: "
                + "; ".join(filter(None, [
                    f"missing {missing}" if missing else "",
                    f"unexpected {extra}" if extra else "",
                    *(f"{k}: expected {expected[k]}, found {found[k]}" for k in bad)])))
        for k, p in params.items():
            p.data = np.array(state[k], dtype=np.float64)

    # ------------------------------------------------------------ forward pieces

    def embed_series(self, x) -> tuple[Tensor, SpatioTemporalGraph]:
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        c = self.config
        if x.shape != (c.n_vars, c.t_in):
            raise nm.ShapeError(f"input window shape {x.shape}, expected {(c.n_vars, c.t_in)}")
        # node (i, t) -> row i*T_in + t
        h = nm.tanh(nm.matmul(x.reshape(-1, 1), self.w_e) + self.b_e)
        return h, self.topology(h, 0)

    def topology(self, h: Tensor, level: int) -> SpatioTemporalGraph:
        return truncate(attention_weights(h, self.levels[level].attention), self.config.tau)

    def cluster(self, graph: SpatioTemporalGraph, key=None) -> ClusterAssignment:
        if self.freeze_clusters and key is not None:
            if key not in self._cluster_cache:
                self._cluster_cache[key] = graclus(graph)
            return self._cluster_cache[key]
        return graclus(graph)

    def readout(self, y1: Tensor) -> Tensor:
        c = self.config
        flat = nm.reshape(y1, (c.n_vars, c.t_in * c.hidden))
        hidden = nm.relu(nm.matmul(flat, self.r_w1) + self.r_b1)
        return nm.matmul(hidden, self.r_w2) + self.r_b2

    def downsweep(self, x, probe: dict | None = None) -> list[LevelState]:
        c = self.config
        h, g = self.embed_series(x)
        states = [LevelState(h, g)]
        key = np.asarray(x).tobytes() if self.freeze_clusters else None
        for i in range(1, c.depth):
            prev = states[-1]
            prev.assignment = self.cluster(prev.graph, None if key is None else (key, i))
            h = embed_level(prev.h, prev.assignment, self.levels[i].embed, c.embed_domain_shift)
            g = coarsen(prev.graph, prev.assignment, h, self.levels[i].attention, c.tau)
            states.append(LevelState(h, g))
        return states

    def upsweep(self, states: list[LevelState]) -> Tensor:
        c = self.config
        deepest = states[-1]
        deepest.u = nm.Tensor(np.zeros(deepest.h.shape))
        deepest.y = memory_update(deepest.h, deepest.u, deepest.graph, self.levels[-1].memory)
        for i in range(len(states) - 2, -1, -1):
            s = states[i]
            s.u = lift_level(states[i + 1].y, s.assignment, self.levels[i].lift,
                             c.lift_domain_shift, c.naive_encoding)
            s.y = memory_update(s.h, s.u, s.graph, self.levels[i].memory)
        return states[0].y

    def forward(self, x, probe: dict | None = None) -> Tensor:
        states = self.downsweep(x)
        y1 = self.upsweep(states)
        if probe is not None:
            probe["h"] = [dirichlet_energy(s.graph, s.h.data) for s in states]
            probe["u"] = [dirichlet_energy(s.graph, s.u.data) for s in states]
            probe["nodes"] = [s.graph.num_nodes for s in states]
        return self.readout(y1)

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data


# ---------------------------------------------------------------- training

@dataclass
class EpochResult:
    train_loss: float
    val_mae: float
    val_rmse: float


def batch_loss(model: HiGFlowModel, samples) -> Tensor:
    losses = [nm.mse_loss(model.forward(s.input), s.target) for s in samples]
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / len(losses))


def evaluate(model: HiGFlowModel, samples) -> tuple[float, float]:
    if not samples:
        return float("nan"), float("nan")
    preds = np.stack([model.predict(s.input) for s in samples])
    targets = np.stack([s.target for s in samples])
    return mae(preds, targets), rmse(preds, targets)


def _diagnostics(model: HiGFlowModel, sample) -> str:
    try:
        probe: dict = {}
        model.forward(sample.input, probe=probe)
        energies = probe["h"]
    except FloatingPointError:
        energies = "unavailable"
    norms = {p.name: float(np.linalg.norm(p.grad)) for p in model.parameters() if p.grad is not None}
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:3]
    return f"level energies={energies}; largest grad norms={worst}"


def train_epoch(model: HiGFlowModel, train, validation, optimizer: nm.RMSProp,
                batch_size: int = 32) -> EpochResult:
    """One chronological pass with per-batch RMSProp updates, then validation."""
    if not train:
        raise ValueError("empty training split")
    params = model.parameters()
    losses = []
    for start in range(0, len(train), batch_size):
        batch = train[start:start + batch_size]
        try:
            with nm.Tape() as tape:
                loss = batch_loss(model, batch)
        except FloatingPointError as exc:
            raise TrainingDivergence(f"non-finite forward pass ({exc}); {_diagnostics(model, batch[0])}") from exc
        if not np.isfinite(loss.item()):
            raise TrainingDivergence(f"non-finite loss; {_diagnostics(model, batch[0])}")
        grads = nm.backward(loss, tape, params)
        optimizer.step(grads)
        losses.append(loss.item() * len(batch))
    vm, vr = evaluate(model, validation)
    return EpochResult(float(np.sum(losses) / len(train)), vm, vr)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: HiGFlowModel, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in model.state_dict().items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path, config: ModelConfig | None = None) -> HiGFlowModel:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
        state = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                 for k, v in doc["params"].items()}
        stored = ModelConfig(**doc["config"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupted checkpoint ({exc})") from exc
    model = HiGFlowModel(config or stored)
    model.load_state_dict(state)
    return model
