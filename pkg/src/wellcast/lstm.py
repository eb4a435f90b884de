"""Two-layer gated recurrent network for one-step-ahead series forecasting.

Pure numpy implementation: forward caches every gate activation, backward runs
full backpropagation through time over both layers, and updates use
bias-corrected Adam with decoupled weight decay. Inference is deterministic;
all training stochasticity (init, shuffling, dropout) derives from one seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmCellParams:
    """One layer's gate weights: w_* act on the input, u_* on the recurrent state."""

    w_f: np.ndarray
    w_i: np.ndarray
    w_g: np.ndarray
    w_o: np.ndarray
    u_f: np.ndarray
    u_i: np.ndarray
    u_g: np.ndarray
    u_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1]


def _zero_cell(d_in: int, hidden: int) -> LstmCellParams:
    return LstmCellParams(
        *(np.zeros((hidden, d_in)) for _ in range(4)),
        *(np.zeros((hidden, hidden)) for _ in range(4)),
        *(np.zeros(hidden) for _ in range(4)),
    )


def init_cell(d_in: int, hidden: int, rng: np.random.Generator) -> LstmCellParams:
    """Uniform [-1/sqrt(H), 1/sqrt(H)] init; the forget-gate bias starts at 1."""
    bound = 1.0 / np.sqrt(hidden)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return LstmCellParams(
        w_f=u(hidden, d_in),
        w_i=u(hidden, d_in),
        w_g=u(hidden, d_in),
        w_o=u(hidden, d_in),
        u_f=u(hidden, hidden),
        u_i=u(hidden, hidden),
        u_g=u(hidden, hidden),
        u_o=u(hidden, hidden),
        b_f=np.ones(hidden),
        b_i=u(hidden),
        b_g=u(hidden),
        b_o=u(hidden),
    )


@dataclass
class LstmNetwork:
    layer1: LstmCellParams
    layer2: LstmCellParams
    dropout_rate: float
    head_w: np.ndarray  # (hidden2,)
    head_b: np.ndarray  # (1,)

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")


def init_network(
    hidden1: int = 45, hidden2: int = 60, dropout_rate: float = 0.10, seed: int = 0
) -> LstmNetwork:
    rng = np.random.default_rng((seed, 0))
    layer1 = init_cell(1, hidden1, rng)
    layer2 = init_cell(hidden1, hidden2, rng)
    bound = 1.0 / np.sqrt(hidden2)
    head_w = rng.uniform(-bound, bound, size=hidden2)
    head_b = rng.uniform(-bound, bound, size=1)
    return LstmNetwork(layer1, layer2, dropout_rate, head_w, head_b)


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def _cell_forward(p: LstmCellParams, x, h_prev, c_prev):
    f = sigmoid(x @ p.w_f.T + h_prev @ p.u_f.T + p.b_f)
    i = sigmoid(x @ p.w_i.T + h_prev @ p.u_i.T + p.b_i)
    g = np.tanh(x @ p.w_g.T + h_prev @ p.u_g.T + p.b_g)
    o = sigmoid(x @ p.w_o.T + h_prev @ p.u_o.T + p.b_o)
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, _StepCache(x, h_prev, c_prev, f, i, g, o, c, tanh_c)


def lstm_step(p: LstmCellParams, x_t, h_prev, c_prev):
    """One gated update: returns (h_t, c_t). Accepts single vectors or batches."""
    x = np.atleast_2d(np.asarray(x_t, dtype=float))
    h = np.atleast_2d(np.asarray(h_prev, dtype=float))
    c = np.atleast_2d(np.asarray(c_prev, dtype=float))
    if x.shape[1] != p.input_size or h.shape[1] != p.hidden_size or c.shape[1] != p.hidden_size:
        raise ValueError(
            f"shape mismatch: expected input {p.input_size}, hidden {p.hidden_size}"
        )
    h_t, c_t, _ = _cell_forward(p, x, h, c)
    if np.asarray(x_t).ndim == 1:
        return h_t[0], c_t[0]
    return h_t, c_t


@dataclass
class _ForwardCache:
    steps1: list
    steps2: list
    dropout_mask: np.ndarray
    h2_dropped: np.ndarray
    scalar_input: bool


def forward(net: LstmNetwork, window, train_mode: bool = False, rng=None):
    """Run window(s) through both layers and the linear head.

    ``window`` is a length-W vector or a (batch, W) matrix. In train mode an
    inverted-dropout mask (scaled by 1/keep) is applied to the layer-2 output
    that feeds the head, so inference needs no rescaling. Returns
    (prediction, cache); the cache feeds ``backward``.
    """
    w = np.asarray(window, dtype=float)
    scalar_input = w.ndim == 1
    if scalar_input:
        w = w[None, :]
    if w.ndim != 2 or w.shape[1] < 1:
        raise ValueError("window must be a non-empty vector or (batch, W) matrix")
    batch, T = w.shape
    h1_size, h2_size = net.layer1.hidden_size, net.layer2.hidden_size

    h1 = np.zeros((batch, h1_size))
    c1 = np.zeros((batch, h1_size))
    steps1 = []
    h1_seq = []
    for t in range(T):
        h1, c1, cache = _cell_forward(net.layer1, w[:, t : t + 1], h1, c1)
        steps1.append(cache)
        h1_seq.append(h1)

    h2 = np.zeros((batch, h2_size))
    c2 = np.zeros((batch, h2_size))
    steps2 = []
    for t in range(T):
        h2, c2, cache = _cell_forward(net.layer2, h1_seq[t], h2, c2)
        steps2.append(cache)

    if train_mode and net.dropout_rate > 0:
        if rng is None:
            raise ValueError("train_mode with dropout requires an rng")
        keep = 1.0 - net.dropout_rate
        mask = (rng.random((batch, h2_size)) < keep) / keep
    else:
        mask = np.ones((batch, h2_size))
    h2_dropped = h2 * mask
    pred = h2_dropped @ net.head_w + net.head_b[0]

    cache = _ForwardCache(steps1, steps2, mask, h2_dropped, scalar_input)
    return (float(pred[0]) if scalar_input else pred), cache


@dataclass
class NetworkGradients:
    layer1: LstmCellParams
    layer2: LstmCellParams
    head_w: np.ndarray
    head_b: np.ndarray


def _cell_backward(p: LstmCellParams, steps, dh_inject):
    """BPTT through one layer. ``dh_inject[t]`` is dL/dh_t from outside the
    layer; returns (parameter gradients, dL/dx_t list)."""
    hidden = p.hidden_size
    batch = steps[0].x.shape[0]
    grads = _zero_cell(p.input_size, hidden)
    dx = [None] * len(steps)
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in range(len(steps) - 1, -1, -1):
        s = steps[t]
        dh = dh_inject[t] + dh_next
        do = dh * s.tanh_c
        dc = dc_next + dh * s.o * (1.0 - s.tanh_c**2)
        df = dc * s.c_prev
        di = dc * s.g
        dg = dc * s.i
        dc_next = dc * s.f

        da_f = df * s.f * (1.0 - s.f)
        da_i = di * s.i * (1.0 - s.i)
        da_g = dg * (1.0 - s.g**2)
        da_o = do * s.o * (1.0 - s.o)

        grads.w_f += da_f.T @ s.x
        grads.w_i += da_i.T @ s.x
        grads.w_g += da_g.T @ s.x
        grads.w_o += da_o.T @ s.x
        grads.u_f += da_f.T @ s.h_prev
        grads.u_i += da_i.T @ s.h_prev
        grads.u_g += da_g.T @ s.h_prev
        grads.u_o += da_o.T @ s.h_prev
        grads.b_f += da_f.sum(axis=0)
        grads.b_i += da_i.sum(axis=0)
        grads.b_g += da_g.sum(axis=0)
        grads.b_o += da_o.sum(axis=0)

        dh_next = da_f @ p.u_f + da_i @ p.u_i + da_g @ p.u_g + da_o @ p.u_o
        dx[t] = da_f @ p.w_f + da_i @ p.w_i + da_g @ p.w_g + da_o @ p.w_o
    return grads, dx


def backward(net: LstmNetwork, cache: _ForwardCache, loss_grad) -> NetworkGradients:
    """Gradients of a scalar loss with ``loss_grad`` = dL/dprediction."""
    dpred = np.atleast_1d(np.asarray(loss_grad, dtype=float))
    T = len(cache.steps2)
    batch, h2_size = cache.h2_dropped.shape

    g_head_w = cache.h2_dropped.T @ dpred
    g_head_b = np.array([dpred.sum()])
    dh2_final = (dpred[:, None] * net.head_w[None, :]) * cache.dropout_mask

    inject2 = [np.zeros((batch, h2_size)) for _ in range(T)]
    inject2[-1] = dh2_final
    g2, dx2 = _cell_backward(net.layer2, cache.steps2, inject2)
    g1, _ = _cell_backward(net.layer1, cache.steps1, dx2)
    return NetworkGradients(g1, g2, g_head_w, g_head_b)


_CELL_FIELDS = ("w_f", "w_i", "w_g", "w_o", "u_f", "u_i", "u_g", "u_o", "b_f", "b_i", "b_g", "b_o")


def named_arrays(obj) -> dict:
    """Flat {name: array} view of a network or gradient bundle (shared arrays)."""
    out = {}
    for layer_name in ("layer1", "layer2"):
        layer = getattr(obj, layer_name)
        for f in _CELL_FIELDS:
            out[f"{layer_name}.{f}"] = getattr(layer, f)
    out["head_w"] = obj.head_w
    out["head_b"] = obj.head_b
    return out


@dataclass
class AdamState:
    """Bias-corrected Adam with decoupled weight decay applied before the step."""

    learning_rate: float = 0.01
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """Update {name: array} parameters in place from same-named gradients."""
    state.step += 1
    t = state.step
    for name, theta in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        if state.weight_decay:
            theta -= state.learning_rate * state.weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        theta -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class SequenceDataset:
    """Standardized sliding-window pairs with a chronological per-well split.

    Construction: values are log1p-transformed (decline curves are roughly
    exponential), standardized per well on that well's training segment, and
    expressed relative to each window's final month (the anchor), whose offset
    is stored separately. Relative coordinates keep late, low-production test
    windows inside the training input distribution; ``raw_outputs`` undoes the
    whole chain for reporting in original units.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    anchors_train: np.ndarray
    anchors_val: np.ndarray
    anchors_test: np.ndarray
    wells_train: list
    wells_val: list
    wells_test: list
    scalers: dict  # well id -> (center, scale) in log space
    window: int

    def _invert(self, relative: np.ndarray, part: str) -> np.ndarray:
        anchors = getattr(self, f"anchors_{part}")
        wells = getattr(self, f"wells_{part}")
        center = np.array([self.scalers[w][0] for w in wells])
        scale = np.array([self.scalers[w][1] for w in wells])
        z = np.asarray(relative, dtype=float) + anchors
        return np.expm1(z * scale + center)

    def raw_targets(self, part: str) -> np.ndarray:
        return self._invert(getattr(self, f"y_{part}"), part)

    def raw_outputs(self, values: np.ndarray, part: str) -> np.ndarray:
        """Model outputs (anchor-relative standardized log space) -> original units."""
        return self._invert(values, part)

    def raw_persistence(self, part: str) -> np.ndarray:
        """The predict-the-last-value baseline in original units."""
        y = getattr(self, f"y_{part}")
        return self._invert(np.zeros_like(y), part)


def partition_sizes(n: int, fractions) -> list:
    sizes = [int(np.floor(f * n)) for f in fractions]
    sizes[0] += n - sum(sizes)
    return sizes


def build_sequences(monthly: dict, window: int = 6, fractions=(0.6, 0.2, 0.2)) -> SequenceDataset:
    """Turn per-well monthly series into (window, next value) training pairs.

    Windows slide with stride 1 and never cross a well boundary; within each
    well the pairs are cut chronologically into train/val/test by ``fractions``
    (remainder pairs join the training part). Values go through log1p, a
    per-well standardization fitted on that well's training segment only, and
    an anchor shift that zeroes each window's final month (see
    SequenceDataset). Wells shorter than ``window + 1`` are skipped with a
    warning; production values must be non-negative.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")

    usable = {}
    splits = {}
    scalers = {}
    for well, series in monthly.items():
        s = np.asarray(series, dtype=float)
        if s.size and s.min() < 0:
            raise ValueError(f"well {well}: production values must be non-negative")
        n_pairs = len(s) - window
        if n_pairs < 1:
            log.warning("skipping well %s: %d months <= window %d", well, len(s), window)
            continue
        v = np.log1p(s)
        usable[well] = v
        splits[well] = partition_sizes(n_pairs, fractions)
        n_train = splits[well][0]
        # the well's training pairs touch months [0, n_train + window)
        segment = v[: n_train + window]
        center = float(segment.mean())
        scale = float(segment.std())
        scalers[well] = (center, scale if scale > 0 else 1.0)
    if not usable:
        raise ValueError("no well has more months than the window length")

    buckets = {key: ([], [], [], []) for key in ("train", "val", "test")}
    for well, v in usable.items():
        center, scale = scalers[well]
        z = (v - center) / scale
        n_train, n_val, n_test = splits[well]
        for p in range(len(v) - window):
            part = "train" if p < n_train else ("val" if p < n_train + n_val else "test")
            xs, ys, anchors, ws = buckets[part]
            anchor = z[p + window - 1]
            xs.append(z[p : p + window] - anchor)
            ys.append(z[p + window] - anchor)
            anchors.append(anchor)
            ws.append(well)

    def pack(part):
        xs, ys, anchors, ws = buckets[part]
        if xs:
            return np.stack(xs), np.asarray(ys), np.asarray(anchors), ws
        return np.empty((0, window)), np.empty(0), np.empty(0), ws

    x_train, y_train, a_train, w_train = pack("train")
    x_val, y_val, a_val, w_val = pack("val")
    x_test, y_test, a_test, w_test = pack("test")
    return SequenceDataset(
        x_train, y_train, x_val, y_val, x_test, y_test,
        a_train, a_val, a_test, w_train, w_val, w_test,
        scalers, window,
    )


@dataclass(frozen=True)
class LstmTrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 1e-6
    epochs: int = 9
    batch_size: int = 32
    seed: int = 0
    hidden1: int = 45
    hidden2: int = 60
    dropout_rate: float = 0.10


@dataclass
class LossCurves:
    train: np.ndarray
    val: np.ndarray


def train_lstm(data: SequenceDataset, cfg: LstmTrainConfig = LstmTrainConfig()):
    """Mini-batch MSE training in standardized space.

    Returns (network, loss curves) where the curves hold one mean-training-loss
    and one full-validation-loss point per epoch. epochs=0 returns the freshly
    initialized network untouched.
    """
    if len(data.y_train) == 0 or len(data.y_val) == 0:
        raise ValueError("training and validation parts must be non-empty")
    net = init_network(cfg.hidden1, cfg.hidden2, cfg.dropout_rate, seed=cfg.seed)
    train_rng = np.random.default_rng((cfg.seed, 1))
    params = named_arrays(net)
    state = AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)

    n = len(data.y_train)
    train_curve, val_curve = [], []
    for epoch in range(cfg.epochs):
        perm = train_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            chunk = perm[start : start + cfg.batch_size]
            xb, yb = data.x_train[chunk], data.y_train[chunk]
            pred, cache = forward(net, xb, train_mode=True, rng=train_rng)
            residual = pred - yb
            loss = float(np.mean(residual**2))
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch offset {start}; "
                    "reduce the learning rate or check the input scaling"
                )
            total += loss * len(chunk)
            grads = backward(net, cache, 2.0 * residual / len(chunk))
            adam_step(params, named_arrays(grads), state)
        train_curve.append(total / n)

        val_pred, _ = forward(net, data.x_val, train_mode=False)
        val_curve.append(float(np.mean((val_pred - data.y_val) ** 2)))
    return net, LossCurves(np.asarray(train_curve), np.asarray(val_curve))


LSTM_FORMAT = "wellcast.lstm-network"
LSTM_FORMAT_VERSION = 1


def save_network(net: LstmNetwork, path) -> None:
    arrays = {name: arr.tolist() for name, arr in named_arrays(net).items()}
    doc = {
        "format": LSTM_FORMAT,
        "version": LSTM_FORMAT_VERSION,
        "hidden1": net.layer1.hidden_size,
        "hidden2": net.layer2.hidden_size,
        "dropout_rate": net.dropout_rate,
        "shapes": {name: list(arr.shape) for name, arr in named_arrays(net).items()},
        "arrays": arrays,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_network(path) -> LstmNetwork:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != LSTM_FORMAT:
        raise ValueError(f"not a serialized network: format={doc.get('format')!r}")
    h1, h2 = int(doc["hidden1"]), int(doc["hidden2"])
    net = LstmNetwork(_zero_cell(1, h1), _zero_cell(h1, h2), float(doc["dropout_rate"]),
                      np.zeros(h2), np.zeros(1))
    target = named_arrays(net)
    for name, data in doc["arrays"].items():
        arr = np.asarray(data, dtype=float)
        expected = tuple(doc["shapes"][name])
        if arr.shape != expected:
            raise ValueError(f"array {name}: shape {arr.shape} != manifest {expected}")
        target[name][...] = arr
    return net
