"""MW-TGC forecaster: multi-weight graph convolution, DRC, LSTM seq2seq."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Normalizer
from .errors import InputError, NonFiniteError, ShapeError
from .numerics import make_rng
from .weights import WeightConfig, WeightKind, build_weight_set, sort_kinds

FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    kinds: tuple = ("plain", "speed_limit_ratio")
    max_rank: int = 3
    h: int = 12
    horizon: int = 12
    c_out: int = 4
    hidden_multiplier: float = 2.0
    hidden: int = None  # explicit size overrides the multiplier
    graph_conv: bool = True
    gc_init_noise: float = 0.05
    weights: WeightConfig = field(default_factory=WeightConfig)

    def __post_init__(self):
        self.kinds = tuple(k.value for k in sort_kinds(WeightKind.parse(k) for k in self.kinds))
        if isinstance(self.weights, dict):
            self.weights = WeightConfig(**self.weights)
        if self.h < 1 or self.horizon < 1 or self.max_rank < 1 or self.c_out < 1:
            raise ValueError("h, horizon, max_rank and c_out must all be >= 1")
        if self.graph_conv and not self.kinds:
            raise ValueError("graph convolution needs at least one weight kind")

    def hidden_size(self, n):
        return int(self.hidden) if self.hidden else int(round(self.hidden_multiplier * n))

    def to_dict(self):
        d = asdict(self)
        d["kinds"] = list(self.kinds)
        return d


# --------------------------------------------------------------------------
# parameter views


@dataclass
class GraphConvLayer:
    """All clipped matrices flattened to one edge list plus per-edge weights.

    ``keys[slot]`` names the (kind, direction, rank) of output column ``slot``.
    """

    keys: list
    rows: np.ndarray
    cols: np.ndarray
    slots: np.ndarray
    wtilde: np.ndarray
    weight: np.ndarray
    n: int

    @property
    def n_slots(self):
        return len(self.keys)

    @property
    def edges(self):
        return (self.rows, self.cols, self.slots, self.n_slots)

    def product(self, slot):
        """Dense ``W_gc * W~`` for one output column."""
        m = self.slots == slot
        out = np.zeros((self.n, self.n))
        out[self.rows[m], self.cols[m]] = self.weight[m] * self.wtilde[m]
        return out

    def wtilde_dense(self, slot):
        m = self.slots == slot
        out = np.zeros((self.n, self.n))
        out[self.rows[m], self.cols[m]] = self.wtilde[m]
        return out


@dataclass
class DrcKernel:
    gamma: np.ndarray  # (ck, C_out)
    bias: np.ndarray  # (C_out,)


@dataclass
class LstmCell:
    """Fused gate matrices; column blocks are input, forget, output, candidate."""

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    GATES = ("input", "forget", "output", "candidate")

    @property
    def hidden(self):
        return self.w_h.shape[0]

    def gate(self, name):
        k = self.GATES.index(name)
        sl = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.w_x[:, sl], self.w_h[:, sl], self.b[sl]


def _key_str(key):
    kind, d, r = key
    return f"{kind.value}/{d}/{r}"


def _parse_key(text):
    kind, d, r = text.split("/")
    return WeightKind(kind), d, int(r)


def layer_from_weight_set(ws, weight=None):
    rows, cols, slots, vals = [], [], [], []
    for slot, key in enumerate(ws.keys):
        coo = ws[key].tocoo()
        keep = coo.data != 0.0
        order = np.lexsort((coo.col[keep], coo.row[keep]))
        rows.append(coo.row[keep][order])
        cols.append(coo.col[keep][order])
        vals.append(coo.data[keep][order])
        slots.append(np.full(order.size, slot))
    rows = np.concatenate(rows).astype(np.int64)
    n = next(iter(ws.entries.values())).shape[0]
    layer = GraphConvLayer(
        keys=list(ws.keys), rows=rows, cols=np.concatenate(cols).astype(np.int64),
        slots=np.concatenate(slots).astype(np.int64), wtilde=np.concatenate(vals).astype(np.float64),
        weight=np.ones(rows.size) if weight is None else weight, n=n)
    return layer


# --------------------------------------------------------------------------
# model


class Model:
    """Parameters, fixed graph structure and normalisation for one forecaster."""

    def __init__(self, config, names, params, layer=None, normalizer=None, seed=0):
        self.config = config
        self.names = tuple(names)
        self.params = params
        self.layer = layer
        self.normalizer = normalizer
        self.seed = int(seed)
        if layer is not None:
            layer.weight = params["gc_weight"]

    @property
    def n(self):
        return len(self.names)

    @property
    def hidden(self):
        return self.params["enc_Wh"].shape[0]

    @property
    def kind(self):
        return "mwtgc" if self.config.graph_conv else "seq2seq"

    @property
    def drc(self):
        return DrcKernel(self.params["drc_kernel"], self.params["drc_bias"])

    @property
    def encoder(self):
        p = self.params
        return LstmCell(p["enc_Wx"], p["enc_Wh"], p["enc_b"])

    @property
    def decoder(self):
        p = self.params
        return LstmCell(p["dec_Wx"], p["dec_Wh"], p["dec_b"])

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params):
        for k, v in params.items():
            self.params[k][...] = v

    def n_parameters(self):
        return sum(v.size for v in self.params.values())


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape)


def init_model(network, config=None, seed=0, normalizer=None):
    """Build a freshly initialised model on ``network``."""
    config = config or ModelConfig()
    n = network.n
    hid = config.hidden_size(n)
    if hid < 1:
        raise ValueError("hidden size must be >= 1")
    rng = make_rng(seed)
    params = {}
    layer = None
    enc_in = config.c_out * n if config.graph_conv else n
    if config.graph_conv:
        ws = build_weight_set(network, config.max_rank, config.kinds, config.weights)
        layer = layer_from_weight_set(ws)
        e = layer.rows.size
        noise = config.gc_init_noise
        params["gc_weight"] = 1.0 + (rng.uniform(-noise, noise, e) if noise > 0 else np.zeros(e))
        ck = layer.n_slots
        params["drc_kernel"] = _glorot(rng, ck, config.c_out, (ck, config.c_out))
        params["drc_bias"] = np.zeros(config.c_out)
    for prefix, fan_in in (("enc", enc_in), ("dec", n)):
        params[f"{prefix}_Wx"] = _glorot(rng, fan_in, hid, (fan_in, 4 * hid))
        params[f"{prefix}_Wh"] = _glorot(rng, hid, hid, (hid, 4 * hid))
        b = np.zeros(4 * hid)
        b[hid:2 * hid] = 1.0
        params[f"{prefix}_b"] = b
    params["out_W"] = _glorot(rng, hid, n, (hid, n))
    params["out_b"] = np.zeros(n)
    return Model(config, network.names, params, layer, normalizer, seed)


# --------------------------------------------------------------------------
# forward pieces (numpy in, numpy out)


def graph_convolve(x_t, layer):
    """ReLU of the concatenated per-matrix convolutions, shape (N, ck)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (layer.n,):
        raise ShapeError(f"graph_convolve: input shape {x_t.shape} does not match N={layer.n}")
    eff = ad.Var(layer.weight * layer.wtilde)
    out = ad.relu(ad.graph_conv(ad.Var(x_t[None, :]), eff, layer.edges))
    return out.value.reshape(layer.n, layer.n_slots)


def dimension_reduce(gc, kernel):
    gc = np.asarray(gc, dtype=np.float64)
    if gc.ndim != 2 or gc.shape[1] != kernel.gamma.shape[0]:
        raise ShapeError(f"dimension_reduce: {gc.shape} columns do not match kernel {kernel.gamma.shape}")
    return gc @ kernel.gamma + kernel.bias


def encode(sequence, cell):
    """Run the encoder over flattened inputs; returns final ``(h, C)``."""
    h = np.zeros(cell.hidden)
    c = np.zeros(cell.hidden)
    for step, x in enumerate(sequence):
        z = np.ravel(x) @ cell.w_x + h @ cell.w_h + cell.b
        h, c, _ = ad.lstm_cell(z[None, :], c[None, :], cell.hidden)
        h, c = h[0], c[0]
        if not (np.isfinite(h).all() and np.isfinite(c).all()):
            raise NonFiniteError(f"encoder state became non-finite at step {step}")
    return h, c


def decode(h, c, x_last, cell, out_w, out_b, steps):
    """Autoregressive decoder; returns predictions of shape (N, steps)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    y = ad.lstm_decode(ad.Var(np.atleast_2d(h)), ad.Var(np.atleast_2d(c)), ad.Var(np.atleast_2d(x_last)),
                       ad.Var(cell.w_x), ad.Var(cell.w_h), ad.Var(cell.b),
                       ad.Var(out_w), ad.Var(out_b), steps)
    return y.value[0].T


def forward(model, window, tape=None, leaves=None):
    """Normalised window (B, h, N) or (h, N) -> predictions (B, T_p, N).

    With ``tape`` the computation is recorded; ``leaves`` maps parameter
    names to tape variables (created from ``model.params`` if omitted).
    Returns a :class:`~mwtgc.autodiff.Var`.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 2:
        window = window[None]
    B, h, N = window.shape
    if N != model.n or h != model.config.h:
        raise ShapeError(f"window shape {window.shape[1:]} does not match model (h={model.config.h}, N={model.n})")
    if leaves is None:
        leaves = {k: (tape.leaf(v) if tape is not None else ad.Var(v)) for k, v in model.params.items()}
    p = leaves
    cfg = model.config
    if cfg.graph_conv:
        layer = model.layer
        eff = ad.mul(p["gc_weight"], ad.Var(layer.wtilde))
        gc = ad.relu(ad.graph_conv(ad.Var(window.reshape(B * h, N)), eff, layer.edges))
        gc = ad.reshape(gc, (B * h * N, layer.n_slots))
        dr = ad.add(ad.matmul(gc, p["drc_kernel"]), p["drc_bias"])
        enc_in = ad.reshape(dr, (B, h, N * cfg.c_out))
    else:
        enc_in = ad.Var(window)
    zx = ad.matmul(enc_in, p["enc_Wx"])
    h_t, c_t = ad.lstm_encode(zx, p["enc_Wh"], p["enc_b"])
    x0 = ad.Var(np.ascontiguousarray(window[:, -1, :]))
    return ad.lstm_decode(h_t, c_t, x0, p["dec_Wx"], p["dec_Wh"], p["dec_b"],
                          p["out_W"], p["out_b"], cfg.horizon)


def predict(model, windows_kmh, batch_size=256):
    """Forecast in km/h for raw windows of shape (B, h, N)."""
    if model.normalizer is None:
        raise ValueError("model has no normalizer; fit one before predicting in km/h")
    windows_kmh = np.asarray(windows_kmh, dtype=np.float64)
    z = model.normalizer.forward(windows_kmh)
    return model.normalizer.inverse(predict_normalized(model, z, batch_size))


def predict_normalized(model, windows, batch_size=256):
    windows = np.asarray(windows, dtype=np.float64)
    out = np.empty((windows.shape[0], model.config.horizon, model.n))
    for a in range(0, windows.shape[0], batch_size):
        out[a:a + batch_size] = forward(model, windows[a:a + batch_size]).value
    return out


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path, extra=None):
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "names": list(model.names),
        "seed": model.seed,
        "normalizer": None if model.normalizer is None else
        {"mean": model.normalizer.mean, "std": model.normalizer.std},
        "column_order": [] if model.layer is None else [_key_str(k) for k in model.layer.keys],
        "param_names": list(model.params),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    if model.layer is not None:
        arrays.update({"layer/rows": model.layer.rows, "layer/cols": model.layer.cols,
                       "layer/slots": model.layer.slots, "layer/wtilde": model.layer.wtilde})
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise InputError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
        params = {k: z[f"param/{k}"].copy() for k in meta["param_names"]}
        cfg_dict = dict(meta["config"])
        cfg_dict["weights"] = WeightConfig(**cfg_dict["weights"])
        config = ModelConfig(**cfg_dict)
        layer = None
        if config.graph_conv:
            layer = GraphConvLayer(
                keys=[_parse_key(s) for s in meta["column_order"]],
                rows=z["layer/rows"].copy(), cols=z["layer/cols"].copy(),
                slots=z["layer/slots"].copy(), wtilde=z["layer/wtilde"].copy(),
                weight=params["gc_weight"], n=len(meta["names"]))
    norm = meta["normalizer"]
    model = Model(config, meta["names"], params, layer,
                  None if norm is None else Normalizer(norm["mean"], norm["std"]), meta["seed"])
    model.meta = meta
    return model


def check_network(model, network):
    """Raise if ``network`` is not the one the model was built on."""
    if tuple(network.names) != model.names:
        extra = sorted(set(network.names) - set(model.names))
        lost = sorted(set(model.names) - set(network.names))
        raise InputError(f"network does not match checkpoint: unexpected ids {extra[:10]}, missing ids {lost[:10]}",
                         offenders=extra + lost)
    if model.layer is not None:
        ref = layer_from_weight_set(build_weight_set(network, model.config.max_rank,
                                                     model.config.kinds, model.config.weights))
        same = (ref.rows.shape == model.layer.rows.shape and np.array_equal(ref.rows, model.layer.rows)
                and np.array_equal(ref.cols, model.layer.cols) and np.array_equal(ref.slots, model.layer.slots))
        if not same:
            raise InputError("network topology differs from the checkpoint's graph structure")
