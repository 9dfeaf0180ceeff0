"""Embedding -> stacked recurrent layers -> sigmoid output classifier.

The output layer has one sigmoid unit per class. Class probabilities are the
clipped sigmoid activations normalized to sum to one, and training minimizes
the negative log of the true class probability.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cells import CELL_KINDS
from .numerics import GLOROT, child_rng, dropout_mask, init_matrix, sigmoid

INPUT_WIDTH = 4
PROB_EPS = 1e-7

# hidden widths of the published architectures (input 4, output 3)
REFERENCE_ARCHITECTURES = {
    "lstm": (60, 30),
    "gru": (60, 30),
    "irnn": (60,),
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    cell_kind: str = "lstm"
    layer_sizes: tuple[int, ...] = (60, 30)
    num_classes: int = 3
    window_length: int = 60
    dropout_rate: float = 0.0
    irnn_scale: float = 1.0
    embedding: str = "dense"
    precision: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(h) for h in self.layer_sizes)
        errors = self.problems()
        if errors:
            raise ConfigError("; ".join(errors))

    def problems(self) -> list[str]:
        errors = []
        if self.cell_kind not in CELL_KINDS:
            errors.append(f"cell_kind must be one of {sorted(CELL_KINDS)}, got {self.cell_kind!r}")
        if not self.layer_sizes or any(h < 1 for h in self.layer_sizes):
            errors.append(f"layer_sizes must be a nonempty list of positive widths, got {list(self.layer_sizes)}")
        if self.num_classes not in (2, 3):
            errors.append(f"num_classes must be 2 or 3, got {self.num_classes}")
        if self.window_length < 2 or self.window_length % 2:
            errors.append(f"window_length must be even and >= 2, got {self.window_length}")
        if not 0.0 <= self.dropout_rate < 1.0:
            errors.append(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not self.irnn_scale > 0:
            errors.append(f"irnn_scale must be > 0, got {self.irnn_scale}")
        if self.embedding not in ("dense", "onehot"):
            errors.append(f"embedding must be 'dense' or 'onehot', got {self.embedding!r}")
        if self.precision not in ("float64", "float32"):
            errors.append(f"precision must be 'float64' or 'float32', got {self.precision!r}")
        return errors

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @property
    def widths(self) -> tuple[int, ...]:
        """Full width chain, e.g. ``(4, 60, 30, 3)``."""
        return (INPUT_WIDTH, *self.layer_sizes, self.num_classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class SpliceModel:
    def __init__(self, config: ModelConfig, embedding: np.ndarray, layers: list, W_out: np.ndarray,
                 b_out: np.ndarray):
        self.config = config
        self.embedding = embedding
        self.layers = layers
        self.W_out = W_out
        self.b_out = b_out
        self._check_widths()

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | None = None) -> "SpliceModel":
        """Fresh model. Without ``rng`` the seed comes from ``config.seed``."""
        rng = rng if rng is not None else child_rng(config.seed, "init")
        dtype = config.dtype
        if config.embedding == "onehot":
            embedding = np.eye(INPUT_WIDTH, dtype=dtype)
        else:
            embedding = init_matrix(INPUT_WIDTH, INPUT_WIDTH, GLOROT, rng, dtype)
        kind = CELL_KINDS[config.cell_kind]
        layers = []
        d = INPUT_WIDTH
        for h in config.layer_sizes:
            if kind.name == "irnn":
                layers.append(kind.params.init(d, h, rng, scale=config.irnn_scale, dtype=dtype))
            else:
                layers.append(kind.params.init(d, h, rng, dtype=dtype))
            d = h
        W_out = init_matrix(config.num_classes, d, GLOROT, rng, dtype)
        b_out = np.zeros(config.num_classes, dtype=dtype)
        return cls(config, embedding, layers, W_out, b_out)

    def _check_widths(self):
        cfg = self.config
        if self.embedding.shape != (INPUT_WIDTH, INPUT_WIDTH):
            raise ConfigError(f"embedding must be {INPUT_WIDTH}x{INPUT_WIDTH}, got {self.embedding.shape}")
        if len(self.layers) != len(cfg.layer_sizes):
            raise ConfigError(f"{len(self.layers)} layers given for layer_sizes {list(cfg.layer_sizes)}")
        d = INPUT_WIDTH
        for i, (layer, h) in enumerate(zip(self.layers, cfg.layer_sizes)):
            if not isinstance(layer, CELL_KINDS[cfg.cell_kind].params):
                raise ConfigError(f"layer {i} is not a {cfg.cell_kind} layer")
            if (layer.input_size, layer.hidden_size) != (d, h):
                raise ConfigError(f"layer {i} maps {layer.input_size}->{layer.hidden_size}, expected {d}->{h}")
            d = h
        if self.W_out.shape != (cfg.num_classes, d) or self.b_out.shape != (cfg.num_classes,):
            raise ConfigError(f"output layer must be {cfg.num_classes}x{d}, got {self.W_out.shape}")

    def parameters(self) -> dict[str, np.ndarray]:
        """Every parameter array by name, in a fixed order.

        The arrays are the live model storage, so in-place updates through
        this mapping change the model.
        """
        out = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            for name in layer.names:
                out[f"layer{i}.{name}"] = layer.arrays[name]
        out["output.W"] = self.W_out
        out["output.b"] = self.b_out
        return out

    def trainable(self) -> dict[str, np.ndarray]:
        params = self.parameters()
        if self.config.embedding == "onehot":
            del params["embedding"]
        return params

    def num_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def copy(self) -> "SpliceModel":
        return SpliceModel(
            ModelConfig.from_dict(self.config.to_dict()),
            self.embedding.copy(),
            [layer.copy() for layer in self.layers],
            self.W_out.copy(),
            self.b_out.copy(),
        )


@dataclass
class ForwardTrace:
    codes: np.ndarray
    mode: str
    h_last: np.ndarray
    y_hat: np.ndarray
    probs: np.ndarray
    caches: list | None = None
    masks: list = field(default_factory=list)


def _as_codes(model: SpliceModel, windows) -> np.ndarray:
    codes = np.asarray(getattr(windows, "bases", windows))
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.ndim != 2:
        raise ValueError(f"expected (N, w) codes, got shape {codes.shape}")
    if codes.shape[1] != model.config.window_length:
        raise ValueError(f"window length {codes.shape[1]} != configured {model.config.window_length}")
    if codes.size and (codes.min() < 0 or codes.max() >= INPUT_WIDTH):
        raise ValueError("windows must contain only A/C/G/T codes (0-3)")
    return codes.astype(np.intp, copy=False)


def forward(model: SpliceModel, windows, mode: str = "infer", rng: np.random.Generator | None = None,
            masks: list | None = None) -> ForwardTrace:
    """Run a batch of windows through the network.

    ``windows`` is an ``(N, w)`` code array, one window's codes, or a
    :class:`~splicernn.ingest.LabeledWindow`. In ``"train"`` mode each layer's
    output sequence is multiplied by an inverted-dropout mask (drawn from
    ``rng`` unless ``masks`` is given) and step caches are kept for
    :func:`backward`.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    codes = _as_codes(model, windows)
    cfg = model.config
    kind = CELL_KINDS[cfg.cell_kind]
    train = mode == "train"
    use_dropout = train and cfg.dropout_rate > 0
    if use_dropout and masks is None and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng or explicit masks")
    x = model.embedding[codes]
    caches = [] if train else None
    used_masks = []
    for i, layer in enumerate(model.layers):
        hs, layer_caches = kind.forward(layer, x)
        if train:
            caches.append(layer_caches)
        if use_dropout:
            mask = masks[i] if masks is not None else dropout_mask(hs.shape, cfg.dropout_rate, rng, hs.dtype)
            hs = hs * mask
            used_masks.append(mask)
        x = hs
    h_last = x[:, -1]
    y_hat = sigmoid(h_last @ model.W_out.T + model.b_out)
    clipped = np.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    probs = clipped / clipped.sum(axis=1, keepdims=True)
    return ForwardTrace(codes, mode, h_last, y_hat, probs, caches, used_masks)


def example_losses(trace: ForwardTrace, labels) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    K = trace.probs.shape[1]
    if labels.shape != (trace.probs.shape[0],) or labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise ValueError(f"labels must be {trace.probs.shape[0]} integers in [0, {K})")
    return -np.log(trace.probs[np.arange(len(labels)), labels])


def loss(trace: ForwardTrace, labels) -> float:
    """Mean multi-class log loss over the batch."""
    return float(example_losses(trace, labels).mean())


def backward(model: SpliceModel, trace: ForwardTrace, labels, scale: float | None = None) -> dict[str, np.ndarray]:
    """Gradients of ``scale * sum(per-example loss)``; default scale is ``1/N``.

    Keys match :meth:`SpliceModel.parameters`.
    """
    if trace.caches is None:
        raise ValueError("no caches: backward needs a train-mode trace")
    labels = np.atleast_1d(np.asarray(labels))
    N = len(labels)
    scale = 1.0 / N if scale is None else scale
    cfg = model.config
    kind = CELL_KINDS[cfg.cell_kind]

    y = trace.y_hat
    clipped = np.clip(y, PROB_EPS, 1.0 - PROB_EPS)
    total = clipped.sum(axis=1, keepdims=True)
    d_clipped = np.broadcast_to(1.0 / total, clipped.shape).copy()
    rows = np.arange(N)
    d_clipped[rows, labels] -= 1.0 / clipped[rows, labels]
    d_clipped *= scale
    inside = (y > PROB_EPS) & (y < 1.0 - PROB_EPS)
    d_z = d_clipped * inside * y * (1.0 - y)

    grads = {
        "output.W": d_z.T @ trace.h_last,
        "output.b": d_z.sum(axis=0),
    }
    d_h = d_z @ model.W_out
    layer_grads = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if trace.masks:
            full = np.zeros((N, len(trace.caches[i]), layer.hidden_size), dtype=d_h.dtype)
            if d_h.ndim == 2:
                full[:, -1] = d_h
            else:
                full[:] = d_h
            d_h = full * trace.masks[i]
        d_h, g = kind.backward(layer, trace.caches[i], d_h)
        layer_grads[i] = g
    d_embed = np.zeros_like(model.embedding)
    np.add.at(d_embed, trace.codes, d_h)
    out = {"embedding": d_embed}
    for i, layer in enumerate(model.layers):
        for name in layer.names:
            out[f"layer{i}.{name}"] = layer_grads[i][name]
    out.update(grads)
    return out


def predict(model: SpliceModel, windows, batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Labels (argmax, lowest index on ties) and probabilities."""
    codes = _as_codes(model, windows)
    if len(codes) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.config.num_classes))
    probs = np.concatenate([forward(model, codes[i:i + batch_size]).probs
                            for i in range(0, len(codes), batch_size)])
    return probs.argmax(axis=1), probs
