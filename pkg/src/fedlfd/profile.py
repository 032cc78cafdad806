"""Multi-stream stacked autoencoder over per-session behavior features.

Three feature streams (static user attributes, per-session state detector
outputs, concatenated sensor-sequence representations) pass through one
dense encoder each, are fused into a shared code layer, and are decoded
through the mirror-image structure. The code-layer activation is the
session encoding; the trained encoder parameters are the user profile.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

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

STREAMS = ("attributes", "state", "streams")


class FingerprintError(ValueError):
    """Profiles built from different architectures cannot be compared."""


@dataclass(frozen=True, eq=False)
class SessionFeatures:
    """Fused-model input for one session.

    ``attributes`` is static per user, ``state`` is the per-session detector
    output vector, ``streams`` concatenates the per-sensor sequence
    representations in canonical sensor order.
    """

    attributes: np.ndarray
    state: np.ndarray
    streams: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "attributes", as_array(self.attributes, ndim=1))
        object.__setattr__(self, "state", as_array(self.state, ndim=1))
        object.__setattr__(self, "streams", as_array(self.streams, ndim=1))


@dataclass(frozen=True)
class ProfileDims:
    attributes: int
    state: int
    streams: int
    hidden: int  # per-stream hidden width
    code: int

    def __post_init__(self):
        for name in ("attributes", "state", "streams", "hidden", "code"):
            if getattr(self, name) < 1:
                raise ShapeError(f"profile dim {name!r} must be >= 1")

    def stream_dim(self, stream: str) -> int:
        return {"attributes": self.attributes, "state": self.state, "streams": self.streams}[stream]


@dataclass
class StackedProfileModel:
    dims: ProfileDims
    encoders: dict[str, DenseLayer]  # per-stream, tanh
    fuse_encode: DenseLayer  # 3*hidden -> code, tanh
    fuse_decode: DenseLayer  # code -> 3*hidden, tanh
    decoders: dict[str, DenseLayer]  # per-stream, identity output


def profile_layout(dims: ProfileDims) -> Layout:
    fields = []
    for stream in STREAMS:
        fields.append((f"encode.{stream}.weights", (dims.hidden, dims.stream_dim(stream))))
        fields.append((f"encode.{stream}.bias", (dims.hidden,)))
    fields.append(("encode.fuse.weights", (dims.code, 3 * dims.hidden)))
    fields.append(("encode.fuse.bias", (dims.code,)))
    fields.append(("decode.fuse.weights", (3 * dims.hidden, dims.code)))
    fields.append(("decode.fuse.bias", (3 * dims.hidden,)))
    for stream in STREAMS:
        fields.append((f"decode.{stream}.weights", (dims.stream_dim(stream), dims.hidden)))
        fields.append((f"decode.{stream}.bias", (dims.stream_dim(stream),)))
    return Layout(fields)


def encoder_layout(dims: ProfileDims) -> Layout:
    """Layout of the encoder half only; this is what a profile packs."""
    full = profile_layout(dims).fields
    return Layout([f for f in full if f[0].startswith("encode.")])


def profile_fingerprint(dims: ProfileDims) -> str:
    text = f"fedlfd-profile-v1|{dims}|{encoder_layout(dims).describe()}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def build_profile_model(dims: ProfileDims, rng: Rng) -> StackedProfileModel:
    encoders = {
        stream: init_dense(dims.stream_dim(stream), dims.hidden, "tanh", rng.child(f"encode.{stream}"))
        for stream in STREAMS
    }
    fuse_encode = init_dense(3 * dims.hidden, dims.code, "tanh", rng.child("encode.fuse"))
    fuse_decode = init_dense(dims.code, 3 * dims.hidden, "tanh", rng.child("decode.fuse"))
    decoders = {
        stream: init_dense(dims.hidden, dims.stream_dim(stream), "identity", rng.child(f"decode.{stream}"))
        for stream in STREAMS
    }
    return StackedProfileModel(dims, encoders, fuse_encode, fuse_decode, decoders)


def model_params(model: StackedProfileModel) -> ParamVector:
    arrays = {}
    for stream in STREAMS:
        arrays[f"encode.{stream}.weights"] = model.encoders[stream].weights
        arrays[f"encode.{stream}.bias"] = model.encoders[stream].bias
        arrays[f"decode.{stream}.weights"] = model.decoders[stream].weights
        arrays[f"decode.{stream}.bias"] = model.decoders[stream].bias
    arrays["encode.fuse.weights"] = model.fuse_encode.weights
    arrays["encode.fuse.bias"] = model.fuse_encode.bias
    arrays["decode.fuse.weights"] = model.fuse_decode.weights
    arrays["decode.fuse.bias"] = model.fuse_decode.bias
    return ParamVector.pack(profile_layout(model.dims), arrays)


def model_from_params(dims: ProfileDims, params: ParamVector) -> StackedProfileModel:
    if params.layout != profile_layout(dims):
        raise ShapeError("params layout does not match the profile dims")
    encoders = {
        stream: DenseLayer(
            params.view(f"encode.{stream}.weights").copy(),
            params.view(f"encode.{stream}.bias").copy(),
            "tanh",
        )
        for stream in STREAMS
    }
    decoders = {
        stream: DenseLayer(
            params.view(f"decode.{stream}.weights").copy(),
            params.view(f"decode.{stream}.bias").copy(),
            "identity",
        )
        for stream in STREAMS
    }
    fuse_encode = DenseLayer(
        params.view("encode.fuse.weights").copy(), params.view("encode.fuse.bias").copy(), "tanh"
    )
    fuse_decode = DenseLayer(
        params.view("decode.fuse.weights").copy(), params.view("decode.fuse.bias").copy(), "tanh"
    )
    return StackedProfileModel(dims, encoders, fuse_encode, fuse_decode, decoders)


def _stream_matrix(features: Sequence[SessionFeatures], stream: str, dims: ProfileDims) -> np.ndarray:
    mat = np.stack([getattr(f, stream) for f in features])
    if mat.shape[1] != dims.stream_dim(stream):
        raise ShapeError(
            f"{stream} dim {mat.shape[1]} does not match model dim {dims.stream_dim(stream)}"
        )
    return mat


def _encode_matrix(model: StackedProfileModel, mats: dict[str, np.ndarray]) -> np.ndarray:
    hidden = [dense_forward(model.encoders[stream], mats[stream]) for stream in STREAMS]
    return dense_forward(model.fuse_encode, np.concatenate(hidden, axis=1))


def encode_session(model: StackedProfileModel, features: SessionFeatures) -> np.ndarray:
    """Code-layer activation for one session; depends on encoder params only."""
    mats = {stream: getattr(features, stream)[None, :] for stream in STREAMS}
    for stream in STREAMS:
        if mats[stream].shape[1] != model.dims.stream_dim(stream):
            raise ShapeError(f"{stream} feature dim does not match the model")
    return _encode_matrix(model, mats)[0]


def encode_sessions(model: StackedProfileModel, features: Sequence[SessionFeatures]) -> np.ndarray:
    if not features:
        raise ValueError("no sessions to encode")
    mats = {stream: _stream_matrix(features, stream, model.dims) for stream in STREAMS}
    return _encode_matrix(model, mats)


def reconstruction_loss(
    model: StackedProfileModel, features: Sequence[SessionFeatures]
) -> tuple[float, ParamVector]:
    """Summed per-stream reconstruction MSE (batch mean) with exact grads."""
    if not features:
        raise ValueError("no sessions given")
    dims = model.dims
    mats = {stream: _stream_matrix(features, stream, dims) for stream in STREAMS}
    hidden = {stream: dense_forward(model.encoders[stream], mats[stream]) for stream in STREAMS}
    fused_in = np.concatenate([hidden[s] for s in STREAMS], axis=1)
    code = dense_forward(model.fuse_encode, fused_in)
    defused = dense_forward(model.fuse_decode, code)
    parts = np.split(defused, [dims.hidden, 2 * dims.hidden], axis=1)
    recon = {
        stream: dense_forward(model.decoders[stream], parts[i]) for i, stream in enumerate(STREAMS)
    }

    grads: dict[str, np.ndarray] = {}
    d_defused_parts = []
    loss = 0.0
    for i, stream in enumerate(STREAMS):
        diff = recon[stream] - mats[stream]
        loss += float((diff * diff).mean())
        d_recon = 2.0 * diff / diff.size
        gx, gw, gb = dense_backward(model.decoders[stream], parts[i], d_recon)
        grads[f"decode.{stream}.weights"] = gw
        grads[f"decode.{stream}.bias"] = gb
        d_defused_parts.append(gx)
    d_defused = np.concatenate(d_defused_parts, axis=1)
    d_code, gw, gb = dense_backward(model.fuse_decode, code, d_defused)
    grads["decode.fuse.weights"] = gw
    grads["decode.fuse.bias"] = gb
    d_fused_in, gw, gb = dense_backward(model.fuse_encode, fused_in, d_code)
    grads["encode.fuse.weights"] = gw
    grads["encode.fuse.bias"] = gb
    d_hidden = np.split(d_fused_in, [dims.hidden, 2 * dims.hidden], axis=1)
    for i, stream in enumerate(STREAMS):
        _, gw, gb = dense_backward(model.encoders[stream], mats[stream], d_hidden[i])
        grads[f"encode.{stream}.weights"] = gw
        grads[f"encode.{stream}.bias"] = gb
    return loss, ParamVector.pack(profile_layout(dims), grads)


def train_profile(
    model: StackedProfileModel,
    sessions: Sequence[SessionFeatures],
    epochs: int,
    learning_rate: float,
    rng: Rng | None = None,
) -> tuple[StackedProfileModel, list[float]]:
    """Full-batch gradient descent on the stacked reconstruction loss.

    Training continues from the given model's parameters, so repeated calls
    refresh a profile as new sessions accumulate. ``rng`` is accepted for
    interface symmetry but unused: full-batch training is deterministic.
    """
    if not sessions:
        raise ValueError("no sessions given")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    params = model_params(model)
    history = []
    for epoch in range(epochs):
        loss, grads = reconstruction_loss(model, sessions)
        if not np.isfinite(loss):
            raise DivergenceError("profile training diverged", epoch)
        history.append(loss)
        params = sgd_step(params, grads, learning_rate)
        model = model_from_params(model.dims, params)
    final, _ = reconstruction_loss(model, sessions)
    if not np.isfinite(final):
        raise DivergenceError("profile training diverged", epochs)
    history.append(final)
    return model, history


@dataclass(frozen=True, eq=False)
class UserProfile:
    """Encoder-half parameters of a trained profile model."""

    values: np.ndarray
    fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "values", as_array(self.values, ndim=1))


def extract_profile(model: StackedProfileModel) -> UserProfile:
    """Pack the encoder parameters in canonical order."""
    layout = encoder_layout(model.dims)
    arrays = {}
    for stream in STREAMS:
        arrays[f"encode.{stream}.weights"] = model.encoders[stream].weights
        arrays[f"encode.{stream}.bias"] = model.encoders[stream].bias
    arrays["encode.fuse.weights"] = model.fuse_encode.weights
    arrays["encode.fuse.bias"] = model.fuse_encode.bias
    packed = ParamVector.pack(layout, arrays)
    return UserProfile(values=packed.values.copy(), fingerprint=profile_fingerprint(model.dims))


def profile_distance(a: UserProfile, b: UserProfile) -> float:
    """Euclidean distance in parameter space; requires equal fingerprints."""
    if a.fingerprint != b.fingerprint:
        raise FingerprintError(
            f"profiles are incomparable: fingerprints {a.fingerprint} != {b.fingerprint}"
        )
    return float(np.linalg.norm(a.values - b.values))
