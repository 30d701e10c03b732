"""Bi-directional LSTM lyric encoder with tag-attention gating and MLP projection.

Each direction runs the standard LSTM cell. When tag attention is on, the
output ``h_t`` of every step is rescaled by a per-step gate ``s_t`` computed
from ``h_t`` and the pooled tag embedding, and the rescaled ``h~_t`` (not
``h_t``) is what the next step sees as its previous hidden state. The cell
state is never gated. The lyric representation is the forward direction's
last output concatenated with the backward direction's output at the first
word, and an MLP (tanh hidden layers, sigmoid output) maps it into tag space.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .const import FORGET_BIAS
from .exceptions import EmptyLyricError, ParameterError, ShapeError, TagsongIndexError
from .numerics import Rng, assert_finite, glorot_uniform, matmul, sigmoid
from .text import EmbeddingTable, embed_phrase
from .types import Blocks, Matrix, Pooling, Vector

logger = logging.getLogger(__name__)

GATES = ("i", "f", "c", "o")


@dataclass
class LstmParams:
    W_i: Matrix
    W_f: Matrix
    W_c: Matrix
    W_o: Matrix
    U_i: Matrix
    U_f: Matrix
    U_c: Matrix
    U_o: Matrix
    b_i: Vector
    b_f: Vector
    b_c: Vector
    b_o: Vector

    def __post_init__(self):
        hidden, input_dim = self.W_i.shape
        for gate in GATES:
            if getattr(self, f"W_{gate}").shape != (hidden, input_dim):
                raise ShapeError(f"W_{gate} must be {(hidden, input_dim)}")
            if getattr(self, f"U_{gate}").shape != (hidden, hidden):
                raise ShapeError(f"U_{gate} must be {(hidden, hidden)}")
            if getattr(self, f"b_{gate}").shape != (hidden,):
                raise ShapeError(f"b_{gate} must be {(hidden,)}")

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1]

    def blocks(self, prefix: str) -> Blocks:
        out: Blocks = {}
        for kind in ("W", "U", "b"):
            for gate in GATES:
                out[f"{prefix}.{kind}_{gate}"] = getattr(self, f"{kind}_{gate}")
        return out

    @classmethod
    def zeros(cls, hidden: int, input_dim: int) -> "LstmParams":
        kwargs = {}
        for gate in GATES:
            kwargs[f"W_{gate}"] = np.zeros((hidden, input_dim))
            kwargs[f"U_{gate}"] = np.zeros((hidden, hidden))
            kwargs[f"b_{gate}"] = np.zeros(hidden)
        return cls(**kwargs)

    @classmethod
    def init(cls, rng: Rng, hidden: int, input_dim: int) -> "LstmParams":
        params = cls.zeros(hidden, input_dim)
        for gate in GATES:
            setattr(params, f"W_{gate}", glorot_uniform(rng, hidden, input_dim))
            setattr(params, f"U_{gate}", glorot_uniform(rng, hidden, hidden))
        params.b_f = np.full(hidden, FORGET_BIAS)
        return params


@dataclass
class AttentionParams:
    W_hm: Matrix
    W_vm: Matrix
    w_ms: Vector

    def __post_init__(self):
        size = self.W_hm.shape[0]
        if self.W_vm.shape[0] != size or self.w_ms.shape != (size,):
            raise ShapeError(f"attention blocks disagree on size: {self.W_hm.shape}, {self.W_vm.shape}, {self.w_ms.shape}")

    def blocks(self, prefix: str) -> Blocks:
        return {f"{prefix}.W_hm": self.W_hm, f"{prefix}.W_vm": self.W_vm, f"{prefix}.w_ms": self.w_ms}

    @classmethod
    def init(cls, rng: Rng, size: int, hidden: int, tag_dim: int) -> "AttentionParams":
        return cls(
            W_hm=glorot_uniform(rng, size, hidden),
            W_vm=glorot_uniform(rng, size, tag_dim),
            w_ms=glorot_uniform(rng, 1, size)[0],
        )


@dataclass
class MlpLayer:
    weight: Matrix
    bias: Vector

    @classmethod
    def init(cls, rng: Rng, fan_in: int, fan_out: int) -> "MlpLayer":
        return cls(weight=glorot_uniform(rng, fan_out, fan_in), bias=np.zeros(fan_out))


def init_mlp(rng: Rng, widths: Sequence[int]) -> List[MlpLayer]:
    return [MlpLayer.init(rng, fan_in, fan_out) for fan_in, fan_out in zip(widths[:-1], widths[1:])]


def mlp_blocks(layers: Sequence[MlpLayer], prefix: str) -> Blocks:
    out: Blocks = {}
    for n, layer in enumerate(layers):
        out[f"{prefix}.{n}.weight"] = layer.weight
        out[f"{prefix}.{n}.bias"] = layer.bias
    return out


def mlp_forward(layers: Sequence[MlpLayer], x: Vector, final: str = "sigmoid") -> Tuple[Vector, List[Vector]]:
    """tanh on hidden layers, ``final`` ("sigmoid" or "linear") on the last one.

    Returns the output and the list of layer inputs/outputs needed by ``mlp_backward``.
    """
    activations = [x]
    a = x
    for n, layer in enumerate(layers):
        if layer.weight.shape[1] != a.shape[0]:
            raise ShapeError(f"MLP layer {n} expects width {layer.weight.shape[1]}, got {a.shape[0]}")
        z = matmul(layer.weight, a[:, None])[:, 0] + layer.bias
        if n < len(layers) - 1:
            a = np.tanh(z)
        elif final == "sigmoid":
            a = sigmoid(z)
        else:
            a = z
        activations.append(a)
    return a, activations


def mlp_backward(
    layers: Sequence[MlpLayer], activations: List[Vector], d_out: Vector, prefix: str, final: str = "sigmoid"
) -> Tuple[Blocks, Vector]:
    grads: Blocks = {}
    da = d_out
    for n in reversed(range(len(layers))):
        a_out = activations[n + 1]
        if n < len(layers) - 1:
            dz = da * (1.0 - a_out * a_out)
        elif final == "sigmoid":
            dz = da * a_out * (1.0 - a_out)
        else:
            dz = da
        grads[f"{prefix}.{n}.weight"] = np.outer(dz, activations[n])
        grads[f"{prefix}.{n}.bias"] = dz.copy()
        da = layers[n].weight.T @ dz
    return grads, da


@dataclass
class EncoderConfig:
    embedding_dim: int
    hidden_size: int
    attention_size: int
    mlp_hidden: Tuple[int, ...]
    output_dim: int
    attention: bool = False
    share_attention: bool = False
    n_moods: int = 0

    @property
    def lyric_dim(self) -> int:
        return 2 * self.hidden_size

    @property
    def mlp_input(self) -> int:
        return self.lyric_dim + (self.embedding_dim if self.n_moods > 0 else 0)


@dataclass
class EncoderParams:
    fwd: LstmParams
    bwd: LstmParams
    mlp: List[MlpLayer]
    att_fwd: Optional[AttentionParams] = None
    att_bwd: Optional[AttentionParams] = None
    mood_table: Optional[Matrix] = None

    @property
    def attention(self) -> bool:
        return self.att_fwd is not None

    @property
    def shared_attention(self) -> bool:
        return self.att_fwd is not None and self.att_bwd is self.att_fwd

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size

    @property
    def output_dim(self) -> int:
        return self.mlp[-1].weight.shape[0]

    def blocks(self) -> Blocks:
        out = {**self.fwd.blocks("fwd"), **self.bwd.blocks("bwd")}
        if self.att_fwd is not None:
            out.update(self.att_fwd.blocks("att_fwd"))
            if not self.shared_attention:
                out.update(self.att_bwd.blocks("att_bwd"))
        out.update(mlp_blocks(self.mlp, "mlp"))
        if self.mood_table is not None:
            out["mood_table"] = self.mood_table
        return out


def init_encoder_params(config: EncoderConfig, rng: Rng) -> EncoderParams:
    """Glorot-uniform weights, zero biases, forget-gate bias +1."""
    fwd = LstmParams.init(rng, config.hidden_size, config.embedding_dim)
    bwd = LstmParams.init(rng, config.hidden_size, config.embedding_dim)
    att_fwd = att_bwd = None
    if config.attention:
        att_fwd = AttentionParams.init(rng, config.attention_size, config.hidden_size, config.embedding_dim)
        if config.share_attention:
            att_bwd = att_fwd
        else:
            att_bwd = AttentionParams.init(rng, config.attention_size, config.hidden_size, config.embedding_dim)
    widths = [config.mlp_input, *config.mlp_hidden, config.output_dim]
    mlp = init_mlp(rng, widths)
    mood_table = glorot_uniform(rng, config.n_moods, config.embedding_dim) if config.n_moods > 0 else None
    return EncoderParams(fwd=fwd, bwd=bwd, mlp=mlp, att_fwd=att_fwd, att_bwd=att_bwd, mood_table=mood_table)


# Cell and gate


def _check_vector(name: str, value: Vector, size: int) -> None:
    if value.shape != (size,):
        raise ShapeError(f"{name} must have shape ({size},), got {value.shape}")


def lstm_step(params: LstmParams, x_t: Vector, h_prev: Vector, C_prev: Vector) -> Tuple[Vector, Vector]:
    _check_vector("x_t", x_t, params.input_dim)
    _check_vector("h_prev", h_prev, params.hidden_size)
    _check_vector("C_prev", C_prev, params.hidden_size)
    step = _cell(params, x_t, h_prev, C_prev)
    assert_finite(step["h"], "LSTM output")
    return step["h"], step["C"]


def _cell(params: LstmParams, x: Vector, h_prev: Vector, C_prev: Vector) -> Dict[str, Vector]:
    i = sigmoid(params.W_i @ x + params.U_i @ h_prev + params.b_i)
    f = sigmoid(params.W_f @ x + params.U_f @ h_prev + params.b_f)
    o = sigmoid(params.W_o @ x + params.U_o @ h_prev + params.b_o)
    c_bar = np.tanh(params.W_c @ x + params.U_c @ h_prev + params.b_c)
    C = i * c_bar + f * C_prev
    tanh_C = np.tanh(C)
    return {"x": x, "h_prev": h_prev, "C_prev": C_prev, "i": i, "f": f, "o": o, "c": c_bar, "C": C, "tanh_C": tanh_C, "h": o * tanh_C}


def attention_gate(att: AttentionParams, h_t: Vector, v_tilde: Vector) -> Tuple[Vector, float]:
    _check_vector("h_t", h_t, att.W_hm.shape[1])
    _check_vector("v_tilde", v_tilde, att.W_vm.shape[1])
    h_tilde, s, _ = _gate(att, h_t, v_tilde)
    return h_tilde, s


def _gate(att: AttentionParams, h_t: Vector, v_tilde: Vector) -> Tuple[Vector, float, Vector]:
    m = sigmoid(att.W_hm @ h_t + att.W_vm @ v_tilde)
    s = float(sigmoid(att.w_ms @ m))
    return h_t * s, s, m


GateFn = Callable[[AttentionParams, Vector, Vector], Tuple[Vector, float, Vector]]


@dataclass
class DirectionCache:
    steps: List[Dict[str, Vector]]
    v_tilde: Optional[Vector]
    gates: List[float] = field(default_factory=list)


def run_direction(
    lstm: LstmParams,
    att: Optional[AttentionParams],
    xs: Matrix,
    v_tilde: Optional[Vector] = None,
    gate: GateFn = _gate,
) -> Tuple[Matrix, DirectionCache]:
    """Run one direction over the rows of ``xs``; returns the per-step outputs (``h~_t``).

    ``gate`` maps ``(att, h_t, v_tilde)`` to ``(h~_t, s_t, m_t)``.
    """
    if xs.ndim != 2 or xs.shape[1] != lstm.input_dim:
        raise ShapeError(f"input sequence must be (len, {lstm.input_dim}), got {xs.shape}")
    if xs.shape[0] == 0:
        raise EmptyLyricError("cannot encode an empty sequence")
    if att is not None and v_tilde is None:
        raise ParameterError("tag attention is enabled but no tag attention vector was given")

    hidden = lstm.hidden_size
    h = np.zeros(hidden)
    C = np.zeros(hidden)
    outputs = np.zeros((xs.shape[0], hidden))
    cache = DirectionCache(steps=[], v_tilde=v_tilde if att is not None else None)
    for t, x in enumerate(xs):
        step = _cell(lstm, x, h, C)
        h_out = step["h"]
        if att is not None:
            h_out, step["s"], step["m"] = gate(att, h_out, v_tilde)
            cache.gates.append(step["s"])
        step["h_out"] = h_out
        cache.steps.append(step)
        outputs[t] = h_out
        h, C = h_out, step["C"]
    assert_finite(outputs, "encoder outputs")
    return outputs, cache


def backprop_direction(
    lstm: LstmParams,
    att: Optional[AttentionParams],
    cache: DirectionCache,
    d_outputs: Matrix,
    lstm_prefix: str,
    att_prefix: Optional[str] = None,
) -> Blocks:
    """Back-propagation through time for one direction.

    ``d_outputs[t]`` is the gradient of the loss with respect to the step-t
    output ``h~_t`` arriving from outside the recurrence.
    """
    grads: Blocks = {name: np.zeros_like(value) for name, value in lstm.blocks(lstm_prefix).items()}
    if att is not None:
        for name, value in att.blocks(att_prefix).items():
            grads[name] = np.zeros_like(value)

    hidden = lstm.hidden_size
    dh_next = np.zeros(hidden)
    dC_next = np.zeros(hidden)
    for t in reversed(range(len(cache.steps))):
        step = cache.steps[t]
        d_out = d_outputs[t] + dh_next
        h = step["h"]
        if att is not None:
            s, m = step["s"], step["m"]
            ds = float(d_out @ h)
            dh = d_out * s
            da = ds * s * (1.0 - s)
            grads[f"{att_prefix}.w_ms"] += da * m
            dz = da * att.w_ms * m * (1.0 - m)
            grads[f"{att_prefix}.W_hm"] += np.outer(dz, h)
            grads[f"{att_prefix}.W_vm"] += np.outer(dz, cache.v_tilde)
            dh = dh + att.W_hm.T @ dz
        else:
            dh = d_out

        i, f, o, c_bar, tanh_C = step["i"], step["f"], step["o"], step["c"], step["tanh_C"]
        do = dh * tanh_C
        dC = dC_next + dh * o * (1.0 - tanh_C * tanh_C)
        dz_gate = {
            "i": dC * c_bar * i * (1.0 - i),
            "f": dC * step["C_prev"] * f * (1.0 - f),
            "c": dC * i * (1.0 - c_bar * c_bar),
            "o": do * o * (1.0 - o),
        }
        dC_next = dC * f
        dh_next = np.zeros(hidden)
        for gate in GATES:
            dz = dz_gate[gate]
            grads[f"{lstm_prefix}.W_{gate}"] += np.outer(dz, step["x"])
            grads[f"{lstm_prefix}.U_{gate}"] += np.outer(dz, step["h_prev"])
            grads[f"{lstm_prefix}.b_{gate}"] += dz
            dh_next += getattr(lstm, f"U_{gate}").T @ dz
    return grads


# Tag attention vector


def tag_embedding_matrix(tag_names: Sequence[str], table: EmbeddingTable) -> Matrix:
    """Row ``d`` is the embedding of tag name ``d`` (mean over its in-vocabulary words)."""
    return np.array([embed_phrase(name, table) for name in tag_names], dtype=np.float64).reshape(len(tag_names), table.dim)


def top_k_tags(tag_vec: Vector, k: int) -> np.ndarray:
    """Indices of the ``k`` largest probabilities, ties broken towards the lower index."""
    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")
    if k > tag_vec.shape[0]:
        raise ParameterError(f"k={k} exceeds the tag dimension {tag_vec.shape[0]}")
    return np.argsort(-tag_vec, kind="stable")[:k]


def pool_tags(tag_vec: Vector, k: int, pooling: Pooling, tag_matrix: Matrix) -> Vector:
    if tag_matrix.shape[0] != tag_vec.shape[0]:
        raise ShapeError(f"{tag_matrix.shape[0]} tag embeddings for a {tag_vec.shape[0]}-dim tag vector")
    selected = tag_matrix[top_k_tags(tag_vec, k)]
    if pooling == "average":
        return selected.mean(axis=0)
    if pooling == "max":
        return selected.max(axis=0)
    raise ParameterError(f"unknown pooling '{pooling}'")


def tag_attention_vector(
    tag_vec: Vector, k: int, pooling: Pooling, tag_names: Sequence[str], table: EmbeddingTable
) -> Vector:
    if len(tag_names) != tag_vec.shape[0]:
        raise ShapeError(f"{len(tag_names)} tag names for a {tag_vec.shape[0]}-dim tag vector")
    return pool_tags(tag_vec, k, pooling, tag_embedding_matrix(tag_names, table))


# Full encoder


@dataclass
class EncoderCache:
    fwd: DirectionCache
    bwd: DirectionCache
    length: int
    mlp_activations: List[Vector]
    mood_id: Optional[int]


def _encode(params: EncoderParams, embedded: Matrix, v_tilde: Optional[Vector]) -> Tuple[Vector, DirectionCache, DirectionCache]:
    if embedded.ndim != 2 or embedded.shape[0] == 0:
        raise EmptyLyricError("cannot encode an empty lyric")
    fwd_out, fwd_cache = run_direction(params.fwd, params.att_fwd, embedded, v_tilde)
    bwd_out, bwd_cache = run_direction(params.bwd, params.att_bwd, embedded[::-1], v_tilde)
    # bwd_out[-1] is the backward direction's output at the first word
    return np.concatenate([fwd_out[-1], bwd_out[-1]]), fwd_cache, bwd_cache


def encode_lyric(params: EncoderParams, embedded: Matrix, v_tilde: Optional[Vector] = None) -> Vector:
    return _encode(params, embedded, v_tilde)[0]


def _project_input(params: EncoderParams, lyric_rep: Vector, mood_id: Optional[int]) -> Vector:
    if lyric_rep.shape != (2 * params.hidden_size,):
        raise ShapeError(f"lyric representation must be ({2 * params.hidden_size},), got {lyric_rep.shape}")
    if params.mood_table is None:
        return lyric_rep
    mood = np.zeros(params.mood_table.shape[1])
    if mood_id is not None:
        if not 0 <= mood_id < params.mood_table.shape[0]:
            raise TagsongIndexError(f"mood id {mood_id} outside {params.mood_table.shape[0]} moods")
        mood = params.mood_table[mood_id]
    return np.concatenate([lyric_rep, mood])


def project(params: EncoderParams, lyric_rep: Vector, mood_id: Optional[int] = None) -> Vector:
    out, _ = mlp_forward(params.mlp, _project_input(params, lyric_rep, mood_id))
    return out


def encoder_forward(
    params: EncoderParams, embedded: Matrix, v_tilde: Optional[Vector] = None, mood_id: Optional[int] = None
) -> Tuple[Vector, EncoderCache]:
    """Encode and project one lyric, keeping everything ``encoder_backward`` needs."""
    lyric_rep, fwd_cache, bwd_cache = _encode(params, embedded, v_tilde)
    out, activations = mlp_forward(params.mlp, _project_input(params, lyric_rep, mood_id))
    cache = EncoderCache(fwd=fwd_cache, bwd=bwd_cache, length=embedded.shape[0], mlp_activations=activations, mood_id=mood_id)
    return out, cache


def encoder_backward(params: EncoderParams, cache: EncoderCache, d_output: Vector) -> Blocks:
    """Exact gradients of a scalar loss for every block in ``params.blocks()``.

    The embedding table is not a parameter here and receives no gradient.
    """
    if d_output.shape != (params.output_dim,):
        raise ShapeError(f"upstream gradient must be ({params.output_dim},), got {d_output.shape}")
    grads, d_input = mlp_backward(params.mlp, cache.mlp_activations, d_output, "mlp")

    hidden = params.hidden_size
    if params.mood_table is not None:
        d_mood = np.zeros_like(params.mood_table)
        if cache.mood_id is not None:
            d_mood[cache.mood_id] = d_input[2 * hidden:]
        grads["mood_table"] = d_mood

    d_fwd = np.zeros((cache.length, hidden))
    d_fwd[-1] = d_input[:hidden]
    d_bwd = np.zeros((cache.length, hidden))
    d_bwd[-1] = d_input[hidden:2 * hidden]

    grads.update(backprop_direction(params.fwd, params.att_fwd, cache.fwd, d_fwd, "fwd", "att_fwd"))
    bwd_att_prefix = "att_fwd" if params.shared_attention else "att_bwd"
    bwd_grads = backprop_direction(params.bwd, params.att_bwd, cache.bwd, d_bwd, "bwd", "tmp_att")
    for name, value in bwd_grads.items():
        if name.startswith("tmp_att."):
            name = bwd_att_prefix + name[len("tmp_att"):]
            if name in grads:
                grads[name] = grads[name] + value
                continue
        grads[name] = value
    return grads
