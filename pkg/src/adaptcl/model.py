"""Embedding network, residual adapter, classifiers, and a hand-rolled
reverse-mode pass through embed -> adapter -> l2-normalize.

The backbone is a small feed-forward net mapping R^D to R^d; the final layer
is linear and the output is projected to the unit sphere. The adapter is a
bottleneck residual applied before normalization, with its up-projection
zero-initialized so a fresh adapter is an exact identity.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVector,
    DimensionMismatch,
    EmptyClassifier,
    TapeConsumed,
)
from .numerics import EPS_NORM, cosine_sim, l2_normalize


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 32
    embed_dim: int = 16
    hidden: tuple = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.embed_dim < 2:
            raise ValueError("need input_dim >= 1 and embed_dim >= 2")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("need at least one positive hidden width")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_deriv(name, z):
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


@dataclass
class Backbone:
    weights: list  # weights[l]: (out, in)
    biases: list  # biases[l]: (out,)
    activation: str

    def param_dict(self) -> dict:
        d = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"layer{i}.W"] = w
            d[f"layer{i}.b"] = b
        return d

    def copy(self) -> "Backbone":
        return copy.deepcopy(self)


@dataclass
class AdapterModule:
    down: np.ndarray  # (r, d)
    up: np.ndarray  # (d, r)
    activation: str

    @property
    def bottleneck(self) -> int:
        return self.down.shape[0]

    def param_dict(self) -> dict:
        return {"adapter.down": self.down, "adapter.up": self.up}

    def copy(self) -> "AdapterModule":
        return copy.deepcopy(self)


def model_params(backbone: Backbone, adapter: "AdapterModule | None") -> dict:
    params = backbone.param_dict()
    if adapter is not None:
        params.update(adapter.param_dict())
    return params


def init_model(config: ModelConfig, rng: np.random.Generator, adapter_rank: int = 8):
    """Scaled-uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero up-projection."""
    dims = [config.input_dim, *config.hidden, config.embed_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    backbone = Backbone(weights, biases, config.activation)
    s = 1.0 / np.sqrt(config.embed_dim)
    adapter = AdapterModule(
        down=rng.uniform(-s, s, size=(adapter_rank, config.embed_dim)),
        up=np.zeros((config.embed_dim, adapter_rank)),
        activation=config.activation,
    )
    return backbone, adapter


@dataclass
class Tape:
    """Intermediates of one forward pass; consumed exactly once by backprop."""

    x: np.ndarray
    pre_acts: list  # z_l for hidden layers
    acts: list  # inputs to each layer (a_0 = x, ...)
    raw_embed: np.ndarray  # backbone output before adapter
    adapter_hidden: "np.ndarray | None"  # Down @ e, pre-activation
    pre_norm: np.ndarray  # embedding before normalization
    norm: float
    unit: np.ndarray
    has_adapter: bool
    consumed: bool = False


def _forward(backbone, adapter, x, record):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (backbone.weights[0].shape[1],):
        raise DimensionMismatch(
            f"input dim {x.shape} vs expected ({backbone.weights[0].shape[1]},)"
        )
    a = x
    acts, pre_acts = [a], []
    n_layers = len(backbone.weights)
    for i, (w, b) in enumerate(zip(backbone.weights, backbone.biases)):
        z = w @ a + b
        if i < n_layers - 1:
            pre_acts.append(z)
            a = _act(backbone.activation, z)
        else:
            a = z
        acts.append(a)
    raw = a
    adapter_hidden = None
    if adapter is not None:
        adapter_hidden = adapter.down @ raw
        a = raw + adapter.up @ _act(adapter.activation, adapter_hidden)
    pre_norm = a
    n = np.linalg.norm(pre_norm)
    if n <= EPS_NORM:
        raise DegenerateVector(f"embedding norm {n:g} <= {EPS_NORM:g}")
    unit = pre_norm / n
    if not record:
        return unit, None
    tape = Tape(
        x=x,
        pre_acts=pre_acts,
        acts=acts[:-1],
        raw_embed=raw,
        adapter_hidden=adapter_hidden,
        pre_norm=pre_norm,
        norm=n,
        unit=unit,
        has_adapter=adapter is not None,
    )
    return unit, tape


def embed(backbone: Backbone, adapter, x) -> np.ndarray:
    """Forward pass to a unit-norm embedding."""
    unit, _ = _forward(backbone, adapter, x, record=False)
    return unit


def embed_with_tape(backbone: Backbone, adapter, x):
    return _forward(backbone, adapter, x, record=True)


def embed_many(backbone: Backbone, adapter, xs) -> np.ndarray:
    return np.stack([embed(backbone, adapter, x) for x in xs])


def backprop(tape: Tape, backbone: Backbone, adapter, d_embedding: np.ndarray) -> dict:
    """Gradients of <unit_embedding, d_embedding> w.r.t. all parameters.

    Applies the normalization Jacobian (I - uu^T)/||v||, then the adapter
    residual, then the backbone layers in reverse.
    """
    if tape.consumed:
        raise TapeConsumed("tape already used")
    tape.consumed = True
    g = np.asarray(d_embedding, dtype=np.float64)
    if g.shape != tape.unit.shape:
        raise DimensionMismatch(f"{g.shape} vs {tape.unit.shape}")

    grads = {}
    u = tape.unit
    d_pre = (g - u * (u @ g)) / tape.norm

    if tape.has_adapter:
        h = tape.adapter_hidden
        act_h = _act(adapter.activation, h)
        d_up_in = adapter.up.T @ d_pre
        d_h = _act_deriv(adapter.activation, h) * d_up_in
        grads["adapter.up"] = np.outer(d_pre, act_h)
        grads["adapter.down"] = np.outer(d_h, tape.raw_embed)
        d_raw = d_pre + adapter.down.T @ d_h
    else:
        d_raw = d_pre

    delta = d_raw
    n_layers = len(backbone.weights)
    for i in range(n_layers - 1, -1, -1):
        grads[f"layer{i}.W"] = np.outer(delta, tape.acts[i])
        grads[f"layer{i}.b"] = delta.copy()
        if i > 0:
            delta = backbone.weights[i].T @ delta
            delta = delta * _act_deriv(backbone.activation, tape.pre_acts[i - 1])
    return grads


@dataclass
class Classifier:
    """Cosine (prototype) or linear classification head.

    Cosine: class_ids maps to unit prototypes, prediction is the argmax of
    cosine similarity. Linear: weight rows per class plus bias. Ties break
    toward the lowest class id.
    """

    variant: str  # "cosine" | "linear"
    prototypes: dict = field(default_factory=dict)  # class id -> unit vector
    weight: "np.ndarray | None" = None  # (|Y|, d), rows follow class_ids order
    bias: "np.ndarray | None" = None
    class_ids: list = field(default_factory=list)  # sorted ascending

    @classmethod
    def cosine(cls, prototypes: dict) -> "Classifier":
        ids = sorted(prototypes)
        return cls(variant="cosine", prototypes=dict(prototypes), class_ids=ids)

    @classmethod
    def linear(cls, class_ids, embed_dim: int) -> "Classifier":
        ids = sorted(set(class_ids))
        return cls(
            variant="linear",
            weight=np.zeros((len(ids), embed_dim)),
            bias=np.zeros(len(ids)),
            class_ids=ids,
        )

    def add_classes(self, class_ids):
        """Grow the head with zero-initialized rows for unseen classes."""
        new = sorted(set(class_ids) - set(self.class_ids))
        if not new:
            return
        if self.variant != "linear":
            raise ValueError("add_classes only applies to the linear variant")
        ids = sorted(self.class_ids + new)
        d = self.weight.shape[1]
        w = np.zeros((len(ids), d))
        b = np.zeros(len(ids))
        for old_row, cid in enumerate(self.class_ids):
            row = ids.index(cid)
            w[row] = self.weight[old_row]
            b[row] = self.bias[old_row]
        self.class_ids, self.weight, self.bias = ids, w, b

    def logits(self, embedding: np.ndarray) -> np.ndarray:
        if not self.class_ids:
            raise EmptyClassifier("no classes registered")
        if self.variant == "cosine":
            return np.array(
                [cosine_sim(embedding, self.prototypes[c]) for c in self.class_ids]
            )
        return self.weight @ embedding + self.bias


def classify(classifier: Classifier, embedding: np.ndarray):
    """Predicted class id and logit vector (ordered by ascending class id)."""
    logits = classifier.logits(embedding)
    idx = int(np.argmax(logits))  # argmax returns the first max: lowest id wins
    return classifier.class_ids[idx], logits


def save_checkpoint(path, backbone: Backbone, adapter) -> None:
    """Text checkpoint: per array a `name;dims` header line, then one CSV row
    of values. Layout documented in the README."""
    params = model_params(backbone, adapter)
    with open(path, "w", newline="\n") as f:
        f.write(f"activation;{backbone.activation}\n")
        f.write(f"n_layers;{len(backbone.weights)}\n")
        for name in sorted(params):
            arr = params[name]
            dims = "x".join(str(s) for s in arr.shape)
            f.write(f"{name};{dims}\n")
            f.write(",".join(repr(float(v)) for v in arr.reshape(-1)) + "\n")


def load_checkpoint(path):
    from .errors import CheckpointError

    try:
        with open(path) as f:
            lines = [ln.rstrip("\n") for ln in f]
    except OSError as e:
        raise CheckpointError(str(e)) from e
    try:
        activation = lines[0].split(";")[1]
        n_layers = int(lines[1].split(";")[1])
        arrays = {}
        i = 2
        while i < len(lines) and lines[i]:
            name, dims = lines[i].split(";")
            shape = tuple(int(s) for s in dims.split("x"))
            values = np.array([float(v) for v in lines[i + 1].split(",")])
            arrays[name] = values.reshape(shape)
            i += 2
    except (IndexError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e
    weights = [arrays[f"layer{i}.W"] for i in range(n_layers)]
    biases = [arrays[f"layer{i}.b"] for i in range(n_layers)]
    backbone = Backbone(weights, biases, activation)
    adapter = None
    if "adapter.down" in arrays:
        adapter = AdapterModule(arrays["adapter.down"], arrays["adapter.up"], activation)
    return backbone, adapter
