"""Sequence-to-sequence LSTM autoencoder for sensor streams.

The encoder folds a variable-length sequence into its final hidden state,
which is the fixed-length representation handed to the profile model. The
decoder is seeded with that state, fed a zero input vector at every step,
and its hidden states are mapped through a linear readout to reconstruct
the sequence in reverse order. Gradients are exact backpropagation through
time, checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    DenseLayer,
    DivergenceError,
    Layout,
    ParamVector,
    ShapeError,
    as_array,
    dense_backward,
    dense_forward,
    init_dense,
    sgd_step,
)
from .rng import Rng

GATES = ("input", "forget", "output", "candidate")


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    """One sensor stream from one session: ``values`` has shape (T, dim)."""

    sensor: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_array(self.values, ndim=2))
        if self.values.shape[0] < 1:
            raise ShapeError("a sequence needs at least one step")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _seq_values(seq) -> np.ndarray:
    if isinstance(seq, ObservationSequence):
        return seq.values
    values = as_array(seq, ndim=2)
    if values.shape[0] < 1:
        raise ShapeError("a sequence needs at least one step")
    return values


@dataclass
class LstmCell:
    """Single LSTM cell; each gate maps the stacked [input; hidden] vector."""

    weights: dict[str, np.ndarray]  # gate -> (hidden, input + hidden)
    biases: dict[str, np.ndarray]  # gate -> (hidden,)

    def __post_init__(self):
        for gate in GATES:
            self.weights[gate] = as_array(self.weights[gate], ndim=2)
            self.biases[gate] = as_array(self.biases[gate], ndim=1)
        q = self.weights["input"].shape[0]
        cols = self.weights["input"].shape[1]
        for gate in GATES:
            if self.weights[gate].shape != (q, cols) or self.biases[gate].shape != (q,):
                raise ShapeError("all four gates must share dimensions")
        if cols <= q:
            raise ShapeError(f"gate width {cols} must exceed hidden dim {q}")

    @property
    def hidden_dim(self) -> int:
        return self.weights["input"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights["input"].shape[1] - self.hidden_dim


@dataclass
class LstmState:
    h: np.ndarray  # exposed hidden state
    c: np.ndarray  # cell memory


def zero_state(hidden_dim: int) -> LstmState:
    return LstmState(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


def init_lstm_cell(input_dim: int, hidden_dim: int, rng: Rng) -> LstmCell:
    if input_dim < 1 or hidden_dim < 1:
        raise ShapeError("input_dim and hidden_dim must be >= 1")
    limit = np.sqrt(6.0 / (input_dim + 2 * hidden_dim))
    weights = {gate: rng.uniform(-limit, limit, (hidden_dim, input_dim + hidden_dim)) for gate in GATES}
    biases = {gate: np.zeros(hidden_dim) for gate in GATES}
    return LstmCell(weights=weights, biases=biases)


def lstm_cell_layout(input_dim: int, hidden_dim: int, prefix: str = "") -> Layout:
    fields = []
    for gate in GATES:
        fields.append((f"{prefix}{gate}.weights", (hidden_dim, input_dim + hidden_dim)))
        fields.append((f"{prefix}{gate}.bias", (hidden_dim,)))
    return Layout(fields)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _step_cached(cell: LstmCell, h_prev, c_prev, u):
    z = np.concatenate([u, h_prev])
    pre = {gate: cell.weights[gate] @ z + cell.biases[gate] for gate in GATES}
    gi = _sigmoid(pre["input"])
    gf = _sigmoid(pre["forget"])
    go = _sigmoid(pre["output"])
    gg = np.tanh(pre["candidate"])
    c_new = gf * c_prev + gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc
    cache = (z, gi, gf, go, gg, c_prev, tc)
    return h_new, c_new, cache


def lstm_step(cell: LstmCell, state: LstmState, u: np.ndarray) -> LstmState:
    """One LSTM transition: gated update of (h, c) from input ``u``."""
    u = as_array(u, ndim=1)
    if u.shape[0] != cell.input_dim:
        raise ShapeError(f"input length {u.shape[0]} != cell input dim {cell.input_dim}")
    if state.h.shape[0] != cell.hidden_dim or state.c.shape[0] != cell.hidden_dim:
        raise ShapeError("state dims do not match the cell hidden dim")
    h, c, _ = _step_cached(cell, state.h, state.c, u)
    return LstmState(h=h, c=c)


def _step_backward(cell: LstmCell, cache, dh, dc, acc: dict[str, np.ndarray], prefix: str):
    """Accumulate parameter grads for one step; returns (du, dh_prev, dc_prev)."""
    z, gi, gf, go, gg, c_prev, tc = cache
    d = cell.input_dim
    do = dh * tc
    dc_total = dc + dh * go * (1.0 - tc * tc)
    di = dc_total * gg
    dg = dc_total * gi
    df = dc_total * c_prev
    dc_prev = dc_total * gf
    dpre = {
        "input": di * gi * (1.0 - gi),
        "forget": df * gf * (1.0 - gf),
        "output": do * go * (1.0 - go),
        "candidate": dg * (1.0 - gg * gg),
    }
    dz = np.zeros_like(z)
    for gate in GATES:
        acc[f"{prefix}{gate}.weights"] += np.outer(dpre[gate], z)
        acc[f"{prefix}{gate}.bias"] += dpre[gate]
        dz += cell.weights[gate].T @ dpre[gate]
    return dz[:d], dz[d:], dc_prev


def _encode_cached(cell: LstmCell, values: np.ndarray):
    h = np.zeros(cell.hidden_dim)
    c = np.zeros(cell.hidden_dim)
    caches = []
    for t in range(values.shape[0]):
        h, c, cache = _step_cached(cell, h, c, values[t])
        caches.append(cache)
    return h, c, caches


def encode_sequence(cell: LstmCell, seq) -> tuple[np.ndarray, np.ndarray]:
    """Run the encoder over a sequence from the zero state.

    Returns the final hidden state (the sequence representation) and the
    final cell memory.
    """
    values = _seq_values(seq)
    if values.shape[1] != cell.input_dim:
        raise ShapeError(
            f"sequence dim {values.shape[1]} != encoder input dim {cell.input_dim}"
        )
    h, c, _ = _encode_cached(cell, values)
    return h, c


def _decode_cached(cell: LstmCell, readout: DenseLayer, h0, c0, steps: int):
    # The first decoder state IS the encoder's final state; later states are
    # produced by stepping with a zero input vector.
    zero_input = np.zeros(cell.input_dim)
    states = [(h0, c0)]
    caches = []
    for _ in range(steps - 1):
        h, c, cache = _step_cached(cell, states[-1][0], states[-1][1], zero_input)
        states.append((h, c))
        caches.append(cache)
    preds = np.stack([dense_forward(readout, h) for h, _ in states])
    return preds, states, caches


def decode_sequence(
    cell: LstmCell, readout: DenseLayer, h_final: np.ndarray, c_final: np.ndarray, steps: int
) -> np.ndarray:
    """Unroll the decoder for ``steps`` predictions from the encoder state."""
    if steps < 1:
        raise ShapeError("steps must be >= 1")
    h_final = as_array(h_final, ndim=1)
    c_final = as_array(c_final, ndim=1)
    if h_final.shape[0] != cell.hidden_dim or c_final.shape[0] != cell.hidden_dim:
        raise ShapeError("state length does not match decoder hidden dim")
    if readout.in_dim != cell.hidden_dim:
        raise ShapeError("readout input dim must equal decoder hidden dim")
    preds, _, _ = _decode_cached(cell, readout, h_final, c_final, steps)
    return preds


@dataclass
class LstmAutoencoder:
    encoder: LstmCell
    decoder: LstmCell
    readout: DenseLayer

    @property
    def feature_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim


def autoencoder_layout(feature_dim: int, hidden_dim: int) -> Layout:
    fields = list(lstm_cell_layout(feature_dim, hidden_dim, "encoder.").fields)
    fields += list(lstm_cell_layout(feature_dim, hidden_dim, "decoder.").fields)
    fields.append(("readout.weights", (feature_dim, hidden_dim)))
    fields.append(("readout.bias", (feature_dim,)))
    return Layout(fields)


def autoencoder_params(auto: LstmAutoencoder) -> ParamVector:
    arrays = {}
    for prefix, cell in (("encoder.", auto.encoder), ("decoder.", auto.decoder)):
        for gate in GATES:
            arrays[f"{prefix}{gate}.weights"] = cell.weights[gate]
            arrays[f"{prefix}{gate}.bias"] = cell.biases[gate]
    arrays["readout.weights"] = auto.readout.weights
    arrays["readout.bias"] = auto.readout.bias
    return ParamVector.pack(autoencoder_layout(auto.feature_dim, auto.hidden_dim), arrays)


def autoencoder_from_params(feature_dim: int, hidden_dim: int, params: ParamVector) -> LstmAutoencoder:
    expected = autoencoder_layout(feature_dim, hidden_dim)
    if params.layout != expected:
        raise ShapeError("params layout does not match the autoencoder dims")
    cells = {}
    for prefix in ("encoder.", "decoder."):
        weights = {gate: params.view(f"{prefix}{gate}.weights").copy() for gate in GATES}
        biases = {gate: params.view(f"{prefix}{gate}.bias").copy() for gate in GATES}
        cells[prefix] = LstmCell(weights=weights, biases=biases)
    readout = DenseLayer(
        weights=params.view("readout.weights").copy(),
        bias=params.view("readout.bias").copy(),
        activation="identity",
    )
    return LstmAutoencoder(encoder=cells["encoder."], decoder=cells["decoder."], readout=readout)


def reconstruct(auto: LstmAutoencoder, seq) -> np.ndarray:
    """Encode then decode one sequence; output has the input's shape."""
    values = _seq_values(seq)
    h, c = encode_sequence(auto.encoder, values)
    return decode_sequence(auto.decoder, auto.readout, h, c, values.shape[0])


def reconstruction_loss(auto: LstmAutoencoder, seqs) -> tuple[float, ParamVector]:
    """Mean reversed-reconstruction MSE over a corpus, with exact BPTT grads."""
    if not seqs:
        raise ValueError("empty sequence corpus")
    layout = autoencoder_layout(auto.feature_dim, auto.hidden_dim)
    acc = {name: np.zeros(shape) for name, shape in layout.fields}
    total = 0.0
    n = len(seqs)
    for seq in seqs:
        values = _seq_values(seq)
        steps, dim = values.shape
        if dim != auto.feature_dim:
            raise ShapeError("corpus feature dims are inconsistent")
        h, c, enc_caches = _encode_cached(auto.encoder, values)
        preds, states, dec_caches = _decode_cached(auto.decoder, auto.readout, h, c, steps)
        target = values[::-1]
        diff = preds - target
        total += float((diff * diff).mean()) / n
        dpred = 2.0 * diff / (diff.size * n)

        # Readout feeds back into every decoder hidden state.
        dh_states = [np.zeros(auto.hidden_dim) for _ in range(steps)]
        for t in range(steps):
            gx, gw, gb = dense_backward(auto.readout, states[t][0], dpred[t])
            acc["readout.weights"] += gw
            acc["readout.bias"] += gb
            dh_states[t] += gx

        # Decoder BPTT down to its first state, which is the encoder output.
        dh = dh_states[-1]
        dc = np.zeros(auto.hidden_dim)
        for t in range(steps - 1, 0, -1):
            _, dh_prev, dc_prev = _step_backward(
                auto.decoder, dec_caches[t - 1], dh, dc, acc, "decoder."
            )
            dh = dh_prev + dh_states[t - 1]
            dc = dc_prev

        # Encoder BPTT from its final state.
        for t in range(len(enc_caches) - 1, -1, -1):
            _, dh, dc = _step_backward(auto.encoder, enc_caches[t], dh, dc, acc, "encoder.")

    return total, ParamVector.pack(layout, acc)


def train_lstm_autoencoder(
    seqs,
    hidden_dim: int,
    epochs: int,
    learning_rate: float,
    rng: Rng,
) -> tuple[LstmAutoencoder, list[float]]:
    """Train by full-batch gradient descent on the reversed-reconstruction MSE.

    Returns the trained autoencoder and a loss history with one entry per
    epoch boundary (epochs + 1 values, first = initial loss, last = final).
    """
    if not seqs:
        raise ValueError("empty sequence corpus")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    dims = {int(_seq_values(s).shape[1]) for s in seqs}
    if len(dims) != 1:
        raise ShapeError(f"corpus feature dims are inconsistent: {sorted(dims)}")
    feature_dim = dims.pop()
    auto = LstmAutoencoder(
        encoder=init_lstm_cell(feature_dim, hidden_dim, rng.child("encoder")),
        decoder=init_lstm_cell(feature_dim, hidden_dim, rng.child("decoder")),
        readout=init_dense(hidden_dim, feature_dim, "identity", rng.child("readout")),
    )
    params = autoencoder_params(auto)
    history = []
    for epoch in range(epochs):
        loss, grads = reconstruction_loss(auto, seqs)
        if not np.isfinite(loss):
            raise DivergenceError("sequence autoencoder training diverged", epoch)
        history.append(loss)
        params = sgd_step(params, grads, learning_rate)
        auto = autoencoder_from_params(feature_dim, hidden_dim, params)
    final, _ = reconstruction_loss(auto, seqs)
    if not np.isfinite(final):
        raise DivergenceError("sequence autoencoder training diverged", epochs)
    history.append(final)
    return auto, history
