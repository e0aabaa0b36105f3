"""The collusion CNN: architecture, training loop, prediction and model files."""

import csv
import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .bids import Label
from .errors import (ChecksumMismatch, ConfigError, InsufficientData, ModelFileError,
                     ShapeMismatch, VersionMismatch)
from .nn import Conv2D, Dense, Flatten, MaxPool2D, Network, OptimizerConfig, SigmoidOutput

log = logging.getLogger(__name__)


def cnn_layers(input_size=64):
    """Conv(8)-Pool-Conv(16)-Pool-Conv(32)-Flatten-128-64-32-sigmoid, 3x3 kernels, 2x2 pools."""
    side = ((input_size - 2) // 2 - 2) // 2 - 2
    if side < 1:
        raise ShapeMismatch(f"input size {input_size} is too small for the architecture")
    flat = side * side * 32
    return [
        Conv2D(1, 8, 3), MaxPool2D(2),
        Conv2D(8, 16, 3), MaxPool2D(2),
        Conv2D(16, 32, 3),
        Flatten(),
        Dense(flat, 128), Dense(128, 64), Dense(64, 32),
        SigmoidOutput(32),
    ]


class CnnModel:
    def __init__(self, network, threshold=0.5):
        self.network = network
        self.threshold = threshold

    @classmethod
    def build(cls, input_size=64, rng=None, threshold=0.5):
        net = Network(cnn_layers(input_size), (1, input_size, input_size))
        if rng is None:
            # all-zero weights: an untrained model that always outputs 0.5
            net.params = [{k: np.zeros(s) for k, s in layer.param_shapes().items()}
                          for layer in net.layers]
        else:
            net.init(rng)
        return cls(net, threshold)

    @property
    def input_size(self):
        return self.network.input_shape[-1]

    def predict_proba(self, images, batch_size=64):
        x = _as_batch(images, self.input_size)
        out = [self.network.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def classify(self, proba):
        return np.where(np.asarray(proba) >= self.threshold,
                        int(Label.COLLUSIVE), int(Label.COMPETITIVE))


def _as_batch(images, size=None):
    if isinstance(images, (list, tuple)):
        images = np.stack([getattr(im, "pixels", im) for im in images])
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != x.shape[3]:
        raise ShapeMismatch(f"expected square single-channel images, got shape {x.shape}")
    if size is not None and x.shape[2] != size:
        raise ShapeMismatch(f"model expects {size}x{size} images, got {x.shape[2]}x{x.shape[3]}")
    return x


def predict(model, img):
    """Probability of collusion for one image and the thresholded class."""
    p = float(model.predict_proba(getattr(img, "pixels", img))[0])
    return p, Label(int(model.classify(p)))


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    validation_fraction: float = 0.10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation fraction must lie strictly between 0 and 1")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainReport:
    epochs: list
    n_train: int
    n_validation: int

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "train_acc", "val_acc"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.loss), repr(e.train_accuracy), repr(e.val_accuracy)])


def _streams(seed):
    init, split, shuffle = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(split),
            np.random.default_rng(shuffle))


def train(images, labels, cfg=TrainConfig()):
    """Fit a fresh CNN.

    The validation subset is drawn once from the seed and kept for every
    epoch.  Each epoch reshuffles the training items, steps the optimizer on
    the mean loss of every minibatch (the last one may be short), and records
    the sample-weighted mean batch loss, the running training accuracy and the
    validation accuracy.
    """
    x = _as_batch(images)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) != len(x):
        raise ShapeMismatch(f"{len(x)} images but {len(y)} labels")
    for cls in (0, 1):
        if np.count_nonzero(y == cls) < 2:
            raise InsufficientData(f"need at least two images of class {cls}, "
                                   f"got {np.count_nonzero(y == cls)}")
    init_rng, split_rng, shuffle_rng = _streams(cfg.seed)
    model = CnnModel.build(x.shape[2], init_rng, cfg.threshold)
    net = model.network

    n = len(x)
    n_val = min(max(1, int(np.floor(cfg.validation_fraction * n + 0.5))), n - 1)
    order = split_rng.permutation(n)
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])

    opt = cfg.optimizer.build()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(train_idx)
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            xb, yb = x[batch], y[batch]
            loss, grads, p = net.forward_backward(xb, yb)
            opt.step(net.params, grads)
            loss_sum += loss * len(batch)
            correct += int(np.count_nonzero(model.classify(p) == yb))
        val_pred = model.classify(model.predict_proba(x[val_idx]))
        stats = EpochStats(epoch, loss_sum / len(perm), correct / len(perm),
                           float(np.mean(val_pred == y[val_idx])))
        log.debug("epoch %d loss %.4f train %.3f val %.3f", epoch, stats.loss,
                  stats.train_accuracy, stats.val_accuracy)
        history.append(stats)
    return model, TrainReport(history, len(train_idx), len(val_idx))


MAGIC = b"RGSN"
FORMAT_VERSION = 1
_KIND_CODES = {"conv2d": 1, "maxpool2d": 2, "flatten": 3, "dense": 4, "sigmoid_output": 5}
_ACTIVATION_CODES = {None: 0, "relu": 1}


def model_bytes(model):
    """Serialise to the RGSN format.

    Layout (little-endian): magic, u16 version, u16 layer count, u32 input
    size, f64 threshold, then per layer u8 kind, u8 activation and four u32
    hyper-parameters followed by its float64 weight and bias arrays, and a
    trailing CRC-32 of everything before it.
    """
    net = model.network
    out = [MAGIC, struct.pack("<HHId", FORMAT_VERSION, len(net.layers), model.input_size,
                              model.threshold)]
    for layer, params in zip(net.layers, net.params):
        if layer.kind == "conv2d":
            hyper = (layer.in_channels, layer.filters, layer.kernel, 0)
        elif layer.kind == "maxpool2d":
            hyper = (layer.pool, 0, 0, 0)
        elif layer.kind in ("dense", "sigmoid_output"):
            hyper = (layer.inputs, layer.units, 0, 0)
        else:
            hyper = (0, 0, 0, 0)
        act = _ACTIVATION_CODES[getattr(layer, "activation", None)]
        out.append(struct.pack("<BB4I", _KIND_CODES[layer.kind], act, *hyper))
        for key in ("w", "b"):
            if key in params:
                out.append(np.ascontiguousarray(params[key], dtype="<f8").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def parse_model(data):
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFileError("not an RGSN model file")
    if len(data) < 6:
        raise ChecksumMismatch("model file truncated")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, this build reads {FORMAT_VERSION}")
    if len(data) < 8 or zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise ChecksumMismatch("model file is truncated or corrupted")
    body = data[:-4]
    try:
        _, n_layers, input_size, threshold = struct.unpack_from("<HHId", body, 4)
        pos = 4 + struct.calcsize("<HHId")
        codes = {v: k for k, v in _KIND_CODES.items()}
        acts = {v: k for k, v in _ACTIVATION_CODES.items()}
        layers, params = [], []
        for _ in range(n_layers):
            kind, act, a, b, c, _d = struct.unpack_from("<BB4I", body, pos)
            pos += struct.calcsize("<BB4I")
            kind = codes[kind]
            if kind == "conv2d":
                layer = Conv2D(a, b, c, activation=acts[act])
            elif kind == "maxpool2d":
                layer = MaxPool2D(a)
            elif kind == "flatten":
                layer = Flatten()
            elif kind == "dense":
                layer = Dense(a, b, activation=acts[act])
            else:
                layer = SigmoidOutput(a)
            p = {}
            for key, shape in layer.param_shapes().items():
                count = int(np.prod(shape))
                if pos + 8 * count > len(body):
                    raise ChecksumMismatch("parameter block runs past end of file")
                p[key] = np.frombuffer(body, dtype="<f8", count=count,
                                       offset=pos).astype(np.float64).reshape(shape)
                pos += 8 * count
            layers.append(layer)
            params.append(p)
    except (struct.error, KeyError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None
    if pos != len(body):
        raise ModelFileError("trailing bytes after last layer")
    net = Network(layers, (1, input_size, input_size), params)
    return CnnModel(net, threshold)


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())
