"""Dense autoencoder with a softmax latent head, trained by hand-rolled
backpropagation and Adam against a reconstruction + transport loss.

The encoder's final softmax places every latent code on the simplex;
the transport penalty pulls the batch of codes toward a Dirichlet
reference sample (fresh draw per batch, same size as the batch).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import simplex
from ._io import atomic_write_bytes
from .errors import FormatError, InvalidInputError, NumericalError
from .sinkhorn import SinkhornConfig, divergence_and_grad, sinkhorn_divergence, uniform_measure

ACTIVATIONS = ("relu", "silu", "softmax", "sigmoid", "identity")
_ACT_CODES = {name: code for code, name in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"SXAE"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise InvalidInputError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkSpec:
    encoder_layers: tuple[LayerSpec, ...]
    decoder_layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(self.encoder_layers))
        object.__setattr__(self, "decoder_layers", tuple(self.decoder_layers))
        if not self.encoder_layers or not self.decoder_layers:
            raise InvalidInputError("encoder and decoder must each have at least one layer")
        for side, layers in (("encoder", self.encoder_layers), ("decoder", self.decoder_layers)):
            for prev, cur in zip(layers, layers[1:]):
                if prev.out_dim != cur.in_dim:
                    raise InvalidInputError(f"{side} layer dims do not chain: {prev.out_dim} -> {cur.in_dim}")
        for layer in self.encoder_layers[:-1] + self.decoder_layers:
            if layer.activation == "softmax":
                raise InvalidInputError("softmax is only valid as the final encoder activation")
        if self.encoder_layers[-1].activation != "softmax":
            raise InvalidInputError("the final encoder activation must be softmax")
        if self.encoder_layers[-1].out_dim != self.decoder_layers[0].in_dim:
            raise InvalidInputError("encoder output dim must equal decoder input dim")

    @property
    def input_dim(self) -> int:
        return self.encoder_layers[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder_layers[-1].out_dim

    @property
    def output_dim(self) -> int:
        return self.decoder_layers[-1].out_dim

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        return self.encoder_layers + self.decoder_layers


def synth_spec(latent_dim: int, input_dim: int = 20) -> NetworkSpec:
    """20 -> 10 -> 5 -> latent encoder with relu, mirrored decoder."""
    encoder = (
        LayerSpec(input_dim, 10, "relu"),
        LayerSpec(10, 5, "relu"),
        LayerSpec(5, latent_dim, "softmax"),
    )
    decoder = (
        LayerSpec(latent_dim, 5, "relu"),
        LayerSpec(5, 10, "relu"),
        LayerSpec(10, input_dim, "identity"),
    )
    return NetworkSpec(encoder, decoder)


def mlp_spec(input_dim: int, hidden: tuple[int, ...], latent_dim: int,
             output_activation: str = "identity") -> NetworkSpec:
    """Symmetric dense autoencoder with configurable hidden widths."""
    dims = (input_dim,) + tuple(hidden)
    encoder = [LayerSpec(a, b, "relu") for a, b in zip(dims, dims[1:])]
    encoder.append(LayerSpec(dims[-1], latent_dim, "softmax"))
    rev = (latent_dim,) + tuple(reversed(hidden))
    decoder = [LayerSpec(a, b, "relu") for a, b in zip(rev, rev[1:])]
    decoder.append(LayerSpec(rev[-1], input_dim, output_activation))
    return NetworkSpec(tuple(encoder), tuple(decoder))


@dataclass
class ParamStore:
    """Weights/biases plus Adam moment accumulators, one entry per layer
    in encoder-then-decoder order.  Weight matrices have shape
    (in_dim, out_dim); activations are computed as x @ W + b."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.m_weights:
            self.m_weights = [np.zeros_like(w) for w in self.weights]
            self.v_weights = [np.zeros_like(w) for w in self.weights]
            self.m_biases = [np.zeros_like(b) for b in self.biases]
            self.v_biases = [np.zeros_like(b) for b in self.biases]

    def copy(self) -> "ParamStore":
        store = ParamStore(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )
        store.m_weights = [m.copy() for m in self.m_weights]
        store.v_weights = [v.copy() for v in self.v_weights]
        store.m_biases = [m.copy() for m in self.m_biases]
        store.v_biases = [v.copy() for v in self.v_biases]
        store.step = self.step
        return store


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParamStore:
    """Glorot-uniform weights, zero biases."""
    weights = []
    biases = []
    for layer in spec.layers:
        bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        weights.append(rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim)))
        biases.append(np.zeros(layer.out_dim))
    return ParamStore(weights=weights, biases=biases)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activate(name: str, t: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(t, 0.0)
    if name == "silu":
        return t * _sigmoid(t)
    if name == "sigmoid":
        return _sigmoid(t)
    if name == "softmax":
        return simplex.softmax(t)
    return t


def _activation_backward(name: str, pre: np.ndarray, out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if name == "relu":
        return upstream * (pre > 0)
    if name == "silu":
        s = _sigmoid(pre)
        return upstream * s * (1.0 + pre * (1.0 - s))
    if name == "sigmoid":
        return upstream * out * (1.0 - out)
    if name == "softmax":
        # J = diag(z) - z z^T applied row-wise.
        return out * (upstream - np.sum(upstream * out, axis=-1, keepdims=True))
    return upstream


class LayerCache(NamedTuple):
    inputs: np.ndarray
    pre: np.ndarray
    out: np.ndarray


class ForwardPass(NamedTuple):
    logits: np.ndarray
    latents: np.ndarray
    recon: np.ndarray
    caches: list[LayerCache]


def forward(spec: NetworkSpec, params: ParamStore, x) -> ForwardPass:
    """Run encoder + decoder; caches keep per-layer activations for
    backprop.  Accepts a single sample or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise InvalidInputError(f"input shape {x.shape} does not match input dim {spec.input_dim}")
    caches: list[LayerCache] = []
    n_enc = len(spec.encoder_layers)
    a = batch
    logits = None
    latents = None
    for idx, layer in enumerate(spec.layers):
        pre = a @ params.weights[idx] + params.biases[idx]
        out = _activate(layer.activation, pre)
        caches.append(LayerCache(inputs=a, pre=pre, out=out))
        if idx == n_enc - 1:
            logits = pre
            latents = out
        a = out
    recon = a
    if single:
        return ForwardPass(logits[0], latents[0], recon[0], caches)
    return ForwardPass(logits, latents, recon, caches)


class Gradients(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def backward(spec: NetworkSpec, params: ParamStore, caches: list[LayerCache],
             grad_recon: np.ndarray, grad_latent: np.ndarray | None = None) -> Gradients:
    """Backpropagate dL/d(recon) (and an optional extra dL/d(latent)
    from the transport penalty) into parameter gradients."""
    n_enc = len(spec.encoder_layers)
    grad_w = [None] * len(spec.layers)
    grad_b = [None] * len(spec.layers)
    upstream = np.asarray(grad_recon, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    for idx in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[idx]
        cache = caches[idx]
        if idx == n_enc - 1 and grad_latent is not None:
            upstream = upstream + grad_latent
        dt = _activation_backward(layer.activation, cache.pre, cache.out, upstream)
        grad_w[idx] = cache.inputs.T @ dt
        grad_b[idx] = dt.sum(axis=0)
        upstream = dt @ params.weights[idx].T
    return Gradients(weights=grad_w, biases=grad_b)


def loss(batch_x, batch_xhat, batch_z, alpha, lam: float, cfg: SinkhornConfig,
         rng: np.random.Generator):
    """Composite loss: (total, recon, penalty).

    recon is the batch mean of squared l2 reconstruction errors; the
    penalty is the transport divergence between the batch latents and a
    fresh Dirichlet reference sample of the same size (one draw from
    ``rng`` per call).
    """
    batch_x = np.asarray(batch_x, dtype=np.float64)
    batch_xhat = np.asarray(batch_xhat, dtype=np.float64)
    batch_z = np.asarray(batch_z, dtype=np.float64)
    if batch_x.shape != batch_xhat.shape or batch_x.shape[0] != batch_z.shape[0]:
        raise InvalidInputError("batch shapes are inconsistent")
    reference = simplex.dirichlet_sample(alpha, batch_z.shape[0], rng)
    recon = float(np.mean(np.sum((batch_x - batch_xhat) ** 2, axis=1)))
    penalty = sinkhorn_divergence(uniform_measure(batch_z), uniform_measure(reference), cfg)
    return recon + lam * penalty, recon, penalty


def adam_step(params: ParamStore, grads: Gradients, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place."""
    params.step += 1
    t = params.step
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params.weights, grads.weights, params.m_weights, params.v_weights):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    for p, g, m, v in zip(params.biases, grads.biases, params.m_biases, params.v_biases):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    lam: float
    epochs: int
    batch_size: int
    alpha: np.ndarray
    seed: int
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        object.__setattr__(self, "alpha", simplex.check_alpha(self.alpha))
        if self.learning_rate < 0 or self.lam < 0:
            raise InvalidInputError("learning_rate and lam must be >= 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be >= 2 (the transport penalty needs a cloud)")


def train(spec: NetworkSpec, cfg: TrainConfig, data: np.ndarray,
          params: ParamStore | None = None):
    """Minibatch training loop.

    Returns (params, trace) where trace is an (epochs, 4) array with
    columns epoch, recon, penalty, total (batch-size-weighted epoch
    means).  Fully deterministic for a fixed seed: the rng stream is
    consumed as init -> per-epoch shuffle -> per-batch reference draw.
    Trailing batches of fewer than 2 samples are skipped.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InvalidInputError("training data must be a non-empty (m, d) matrix")
    if data.shape[1] != spec.input_dim:
        raise InvalidInputError(f"data dim {data.shape[1]} does not match network input {spec.input_dim}")
    if spec.latent_dim != cfg.alpha.size:
        raise InvalidInputError(f"alpha length {cfg.alpha.size} does not match latent dim {spec.latent_dim}")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(spec, rng)
    trace = np.zeros((cfg.epochs, 4))
    m = data.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(m)
        recon_sum = 0.0
        penalty_sum = 0.0
        total_sum = 0.0
        seen = 0
        for start in range(0, m, cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            if batch_idx.size < 2:
                continue
            batch = data[batch_idx]
            fwd = forward(spec, params, batch)
            reference = simplex.dirichlet_sample(cfg.alpha, batch_idx.size, rng)
            try:
                penalty, latent_grad, _ = divergence_and_grad(
                    uniform_measure(fwd.latents), uniform_measure(reference), cfg.sinkhorn)
            except NumericalError as err:
                raise NumericalError(
                    f"transport solve failed at epoch {epoch}, batch {start // cfg.batch_size}: {err}")
            recon = float(np.mean(np.sum((batch - fwd.recon) ** 2, axis=1)))
            total = recon + cfg.lam * penalty
            grad_recon = 2.0 * (fwd.recon - batch) / batch_idx.size
            grads = backward(spec, params, fwd.caches, grad_recon, cfg.lam * latent_grad)
            adam_step(params, grads, cfg.learning_rate)
            recon_sum += recon * batch_idx.size
            penalty_sum += penalty * batch_idx.size
            total_sum += total * batch_idx.size
            seen += batch_idx.size
        trace[epoch - 1] = (epoch, recon_sum / seen, penalty_sum / seen, total_sum / seen)
    return params, trace


def _spec_block(layers: tuple[LayerSpec, ...]) -> bytes:
    parts = [struct.pack("<I", len(layers))]
    for layer in layers:
        parts.append(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_CODES[layer.activation]))
    return b"".join(parts)


def save_checkpoint(path, spec: NetworkSpec, params: ParamStore) -> None:
    """Binary checkpoint: magic, version, layer specs, then per-layer
    weight (row-major) and bias blobs as little-endian f64.  Adam state
    is not persisted."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(_spec_block(spec.encoder_layers))
    parts.append(_spec_block(spec.decoder_layers))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.offset)
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def _read_layers(reader: _Reader, side: str) -> tuple[LayerSpec, ...]:
    count = reader.u32(f"{side} layer count")
    if count == 0 or count > 1024:
        raise FormatError(f"implausible {side} layer count {count}", offset=reader.offset - 4)
    layers = []
    for i in range(count):
        in_dim = reader.u32(f"{side} layer {i} in_dim")
        out_dim = reader.u32(f"{side} layer {i} out_dim")
        code = reader.u8(f"{side} layer {i} activation")
        if code >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation code {code}", offset=reader.offset - 1)
        layers.append(LayerSpec(in_dim, out_dim, ACTIVATIONS[code]))
    return tuple(layers)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (spec, params) with
    zeroed Adam state."""
    with open(path, "rb") as handle:
        blob = handle.read()
    reader = _Reader(blob)
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    encoder = _read_layers(reader, "encoder")
    decoder = _read_layers(reader, "decoder")
    try:
        spec = NetworkSpec(encoder, decoder)
    except InvalidInputError as err:
        raise FormatError(f"invalid network spec in checkpoint: {err}", offset=reader.offset)
    weights = []
    biases = []
    for layer in spec.layers:
        w_bytes = reader.take(8 * layer.in_dim * layer.out_dim, "weights")
        weights.append(np.frombuffer(w_bytes, dtype="<f8").reshape(layer.in_dim, layer.out_dim).copy())
        b_bytes = reader.take(8 * layer.out_dim, "bias")
        biases.append(np.frombuffer(b_bytes, dtype="<f8").copy())
    if reader.offset != len(blob):
        raise FormatError("trailing bytes after parameter blobs", offset=reader.offset)
    return spec, ParamStore(weights=weights, biases=biases)


def encode(spec: NetworkSpec, params: ParamStore, x) -> np.ndarray:
    """Latent codes only (softmax outputs)."""
    return forward(spec, params, x).latents


def decode(spec: NetworkSpec, params: ParamStore, z) -> np.ndarray:
    """Run only the decoder stack on latent rows."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    a = z[None, :] if single else z
    if a.shape[1] != spec.latent_dim:
        raise InvalidInputError(f"latent dim {a.shape[1]} does not match network latent {spec.latent_dim}")
    offset = len(spec.encoder_layers)
    for idx, layer in enumerate(spec.decoder_layers):
        pre = a @ params.weights[offset + idx] + params.biases[offset + idx]
        a = _activate(layer.activation, pre)
    return a[0] if single else a
