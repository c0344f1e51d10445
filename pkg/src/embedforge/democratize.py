"""Deep autoencoder that turns one wide embedding into a ladder of narrower ones.

Every encoder layer is a usable representation: ``encode_at_layer(x, j)``
returns the ``layer_dims[j]``-wide activation, so consumers pick the width
that suits their latency/quality budget from a single trained model.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import EmbeddingMatrix

_log = logging.getLogger(__name__)

__all__ = [
    "AutoencoderSpec",
    "AutoencoderModel",
    "TrainingDiverged",
    "train_autoencoder",
    "encode_at_layer",
    "compress_embedding",
    "loss_and_grads",
    "save_autoencoder",
    "load_autoencoder",
]

DEFAULT_LADDER = (1000, 500, 200, 100, 50)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class AutoencoderSpec:
    layer_dims: tuple = DEFAULT_LADDER
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("need an input dim and at least one encoder layer")
        if any(b >= a for a, b in zip(dims, dims[1:])) or dims[-1] < 1:
            raise ValueError(f"layer dims must strictly decrease: {dims}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be positive")

    @property
    def bottleneck(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def decoder_dims(self) -> tuple:
        return self.layer_dims[::-1]


@dataclass
class AutoencoderModel:
    """Encoder ``f`` and mirrored decoder ``g``, parameterized on raw inputs.

    Training runs on standardized inputs; afterwards the standardization is
    folded into the first encoder layer and the de-standardization into the
    last decoder layer, so ``encoder_W[0]`` acts on raw vectors.
    """

    spec: AutoencoderSpec
    encoder_W: list
    encoder_b: list
    decoder_W: list
    decoder_b: list
    mean: np.ndarray
    scale: np.ndarray
    loss_trace: list = field(default_factory=list)

    def encode(self, X, layer: int | None = None) -> np.ndarray:
        layer = self.spec.bottleneck if layer is None else layer
        if not 0 <= layer <= self.spec.bottleneck:
            raise IndexError(f"layer {layer} outside [0, {self.spec.bottleneck}]")
        H = np.asarray(X, dtype=np.float64)
        for W, b in zip(self.encoder_W[:layer], self.encoder_b[:layer]):
            H = np.maximum(H @ W + b, 0.0)
        return H

    def decode(self, H) -> np.ndarray:
        H = np.asarray(H, dtype=np.float64)
        last = len(self.decoder_W) - 1
        for i, (W, b) in enumerate(zip(self.decoder_W, self.decoder_b)):
            H = H @ W + b
            if i < last:
                H = np.maximum(H, 0.0)
        return H

    def reconstruct(self, X) -> np.ndarray:
        return self.decode(self.encode(X))

    def loss(self, X) -> float:
        """Mean squared reconstruction error in standardized units (the training loss)."""
        X = np.asarray(X, dtype=np.float64)
        R = (self.reconstruct(X) - X) / self.scale
        return float(np.mean(R * R))


# -- forward / backward in standardized space -------------------------------------


def _forward(params, X):
    """Return pre-activations and activations for every layer (encoder then decoder)."""
    Ws, bs = params
    acts = [X]
    pres = []
    H = X
    last = len(Ws) - 1
    for i, (W, b) in enumerate(zip(Ws, bs)):
        Z = H @ W + b
        pres.append(Z)
        H = Z if i == last else np.maximum(Z, 0.0)
        acts.append(H)
    return pres, acts


def loss_and_grads(params, X):
    """MSE ``mean((g(f(X)) - X)^2)`` and its gradients for ``params = (Ws, bs)``."""
    Ws, bs = params
    pres, acts = _forward(params, X)
    out = acts[-1]
    diff = out - X
    loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size
    gW = [None] * len(Ws)
    gb = [None] * len(Ws)
    for i in range(len(Ws) - 1, -1, -1):
        if i != len(Ws) - 1:
            delta = delta * (pres[i] > 0)
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ Ws[i].T
    return loss, (gW, gb)


def _init_params(spec: AutoencoderSpec, rng: np.random.Generator):
    dims = list(spec.layer_dims) + list(spec.decoder_dims[1:])
    Ws, bs = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def train_autoencoder(data: EmbeddingMatrix | np.ndarray, spec: AutoencoderSpec = AutoencoderSpec()) -> AutoencoderModel:
    """Fit encoder and decoder end to end by mini-batch gradient descent on MSE.

    Deterministic for a fixed ``spec.seed``. Raises :class:`TrainingDiverged`
    if the loss stops being finite.
    """
    X = data.values if isinstance(data, EmbeddingMatrix) else np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if d != spec.layer_dims[0]:
        raise ValueError(f"data dim {d} does not match input layer {spec.layer_dims[0]}")
    if n < spec.batch_size:
        raise ValueError(f"need at least batch_size={spec.batch_size} rows, got {n}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale

    rng = np.random.default_rng(spec.seed)
    Ws, bs = _init_params(spec, rng)
    trace = []
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, spec.batch_size):
            batch = Xs[order[lo:lo + spec.batch_size]]
            loss, (gW, gb) = loss_and_grads((Ws, bs), batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}; lower lr (now {spec.lr})")
            total += loss * len(batch)
            for i in range(len(Ws)):
                Ws[i] -= spec.lr * gW[i]
                bs[i] -= spec.lr * gb[i]
        trace.append(total / n)
        _log.debug("autoencoder epoch %d loss %.6g", epoch, trace[-1])

    n_enc = spec.bottleneck
    enc_W, enc_b = Ws[:n_enc], bs[:n_enc]
    dec_W, dec_b = Ws[n_enc:], bs[n_enc:]
    # fold standardization into the boundary layers
    enc_b[0] = enc_b[0] - (mean / scale) @ enc_W[0]
    enc_W[0] = enc_W[0] / scale[:, None]
    dec_b[-1] = dec_b[-1] * scale + mean
    dec_W[-1] = dec_W[-1] * scale[None, :]
    return AutoencoderModel(spec, enc_W, enc_b, dec_W, dec_b, mean, scale, trace)


def encode_at_layer(model: AutoencoderModel, x, layer: int) -> np.ndarray:
    """Activation of encoder layer ``layer`` (0 is the raw input)."""
    return model.encode(np.asarray(x, dtype=np.float64)[None, :], layer)[0]


def compress_embedding(model: AutoencoderModel, emb: EmbeddingMatrix, layer: int) -> EmbeddingMatrix:
    if emb.dim != model.spec.layer_dims[0]:
        raise ValueError(f"embedding dim {emb.dim} does not match model input {model.spec.layer_dims[0]}")
    return EmbeddingMatrix(emb.vocab, model.encode(emb.values, layer))


# -- persistence -------------------------------------------------------------------


def _write_f32(path: Path, a: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_f32(path: Path, shape) -> np.ndarray:
    return np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64).reshape(shape)


def save_autoencoder(model: AutoencoderModel, out_dir) -> Path:
    """Manifest ``model.json`` plus one little-endian f32 blob per weight and bias."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blobs = []
    for part, Ws, bs in (("enc", model.encoder_W, model.encoder_b), ("dec", model.decoder_W, model.decoder_b)):
        for i, (W, b) in enumerate(zip(Ws, bs)):
            _write_f32(out / f"{part}{i}_W.f32", W)
            _write_f32(out / f"{part}{i}_b.f32", b)
            blobs.append({"name": f"{part}{i}", "shape": list(W.shape)})
    _write_f32(out / "mean.f32", model.mean)
    _write_f32(out / "scale.f32", model.scale)
    doc = {"kind": "autoencoder", "spec": asdict(model.spec), "layers": blobs,
           "loss_trace": model.loss_trace}
    doc["spec"]["layer_dims"] = list(model.spec.layer_dims)
    (out / "model.json").write_text(json.dumps(doc, indent=2) + "\n")
    return out


def load_autoencoder(model_dir) -> AutoencoderModel:
    d = Path(model_dir)
    doc = json.loads((d / "model.json").read_text())
    spec = AutoencoderSpec(**doc["spec"])
    parts = {"enc": ([], []), "dec": ([], [])}
    for layer in doc["layers"]:
        shape = tuple(layer["shape"])
        Ws, bs = parts[layer["name"][:3]]
        Ws.append(_read_f32(d / f"{layer['name']}_W.f32", shape))
        bs.append(_read_f32(d / f"{layer['name']}_b.f32", (shape[1],)))
    dim = spec.layer_dims[0]
    return AutoencoderModel(spec, *parts["enc"], *parts["dec"],
                            _read_f32(d / "mean.f32", (dim,)), _read_f32(d / "scale.f32", (dim,)),
                            doc.get("loss_trace", []))
