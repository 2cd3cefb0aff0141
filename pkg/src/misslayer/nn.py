"""Feedforward networks whose first layer may take incomplete inputs.

A generalized first layer evaluates expected ReLU or RBF activations over
the conditional mixture of each incomplete row; complete rows go through the
ordinary layer, so a network fed only complete data behaves exactly like its
classical counterpart.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import activations as act
from .density import VAR_FLOOR, GmmParams, MissingPoint
from .errors import InvalidArgument, TrainingDiverged

GENERALIZED = ("generalized-relu", "generalized-rbf")
LAYER_KINDS = GENERALIZED + ("dense", "rbf")
ACTIVATIONS = ("relu", "sigmoid", "linear", "softmax")
LOSSES = ("masked-mse", "cross-entropy")
RBF_WIDTH_FLOOR = 1e-2


@dataclass
class LayerSpec:
    kind: str
    width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if int(self.width) < 1:
            raise InvalidArgument("layer width must be positive")
        self.width = int(self.width)
        if self.kind == "generalized-relu":
            self.activation = "relu"
        elif self.kind in ("generalized-rbf", "rbf"):
            self.activation = "linear"


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    gmm_lr_scale: float = 1.0
    patience: int | None = None

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgument("learning rate must be >= 0; batch size and epochs positive")
        self.betas = tuple(self.betas)


class NetworkModel:
    """Ordered layers with parameter dicts plus an optional mixture density."""

    def __init__(self, input_dim, layers, loss, params, density=None):
        self.input_dim = int(input_dim)
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers]
        self.loss = loss
        self.params = params
        self.density = density
        self.validate()

    def validate(self):
        if self.loss not in LOSSES:
            raise InvalidArgument(f"unknown loss {self.loss!r}")
        if not self.layers:
            raise InvalidArgument("network needs at least one layer")
        for i, spec in enumerate(self.layers):
            if spec.kind in GENERALIZED + ("rbf",) and i != 0:
                raise InvalidArgument(f"{spec.kind} layers are only allowed first")
            if spec.activation == "softmax" and i != len(self.layers) - 1:
                raise InvalidArgument("softmax is only allowed on the last layer")
        if self.generalized and self.density is None:
            raise InvalidArgument("a generalized first layer needs a density")
        if self.density is not None and self.density.d != self.input_dim:
            raise InvalidArgument("density dimension differs from the input dimension")
        if self.loss == "cross-entropy" and self.layers[-1].activation != "softmax":
            raise InvalidArgument("cross-entropy expects a softmax output layer")
        fan_in = self.input_dim
        for spec, p in zip(self.layers, self.params):
            expect = {"W": (fan_in, spec.width), "b": (spec.width,)}
            if spec.kind in ("generalized-rbf", "rbf"):
                expect = {"centers": (spec.width, fan_in), "log_widths": (spec.width, fan_in)}
            for name, shape in expect.items():
                if name not in p or p[name].shape != shape:
                    raise InvalidArgument(f"parameter {name} of {spec.kind} layer has wrong shape")
            fan_in = spec.width

    @property
    def generalized(self):
        return self.layers[0].kind in GENERALIZED

    @property
    def output_dim(self):
        return self.layers[-1].width

    @classmethod
    def build(cls, input_dim, layers, loss, density=None, seed=0, init_data=None):
        """Seeded initialization.

        Dense layers: uniform He (ReLU) or Xavier (others) bounds. RBF layers:
        centers drawn from rows of ``init_data``; widths |N(0,1)| floored.
        The density never touches the weight RNG stream.
        """
        layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers]
        rng = np.random.default_rng(seed)
        params = []
        fan_in = int(input_dim)
        for spec in layers:
            if spec.kind in ("generalized-rbf", "rbf"):
                if init_data is None:
                    centers = rng.standard_normal((spec.width, fan_in))
                else:
                    rows = rng.choice(init_data.shape[0], size=spec.width,
                                      replace=init_data.shape[0] < spec.width)
                    centers = np.array(init_data[rows], dtype=np.float64)
                widths = np.abs(rng.standard_normal((spec.width, fan_in))) + RBF_WIDTH_FLOOR
                params.append({"centers": centers, "log_widths": np.log(widths)})
            else:
                if spec.activation == "relu":
                    bound = math.sqrt(6.0 / fan_in)
                else:
                    bound = math.sqrt(6.0 / (fan_in + spec.width))
                W = rng.uniform(-bound, bound, size=(fan_in, spec.width))
                params.append({"W": W, "b": np.zeros(spec.width)})
            fan_in = spec.width
        return cls(input_dim, layers, loss, params, density.copy() if density is not None else None)

    def copy(self):
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        density = self.density.copy() if self.density is not None else None
        return NetworkModel(self.input_dim, [LayerSpec(**asdict(l)) for l in self.layers],
                            self.loss, params, density)

    def parameter_arrays(self):
        """(array, is_density) pairs in a fixed order; optimizers update in place."""
        out = [(p[name], False) for p in self.params for name in sorted(p)]
        if self.density is not None and self.generalized:
            out += [(self.density.logits, True), (self.density.means, True),
                    (self.density.log_vars, True)]
        return out

    def n_parameters(self):
        return sum(a.size for a, _ in self.parameter_arrays())

    # checkpoint ------------------------------------------------------------

    def to_dict(self):
        return {
            "format": "misslayer-model",
            "version": 1,
            "input_dim": self.input_dim,
            "loss": self.loss,
            "layers": [dict(asdict(spec), params={k: v.tolist() for k, v in sorted(p.items())})
                       for spec, p in zip(self.layers, self.params)],
            "density": self.density.to_dict() if self.density is not None else None,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "misslayer-model":
            raise InvalidArgument("not a model checkpoint")
        layers, params = [], []
        for entry in doc["layers"]:
            entry = dict(entry)
            p = entry.pop("params")
            layers.append(LayerSpec(**entry))
            params.append({k: np.array(v, dtype=np.float64) for k, v in p.items()})
        density = GmmParams.from_dict(doc["density"]) if doc.get("density") else None
        return cls(doc["input_dim"], layers, doc["loss"], params, density)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# layer primitives


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "softmax":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    return z


def _activate_backward(G, z, a, kind):
    if kind == "relu":
        return G * (z > 0)
    if kind == "sigmoid":
        return G * a * (1.0 - a)
    if kind == "softmax":
        return a * (G - np.sum(G * a, axis=1, keepdims=True))
    return G


def _dense_forward(x, p, kind):
    z = x @ p["W"] + p["b"]
    return _activate(z, kind), z


def _first_layer_forward(model, x, miss):
    spec, p = model.layers[0], model.params[0]
    inc = miss.any(axis=1)
    cache = {"inc": inc}
    if spec.kind in ("dense", "rbf") and inc.any():
        raise InvalidArgument("a classical first layer needs complete inputs")
    if spec.kind in ("dense", "generalized-relu"):
        if not inc.any():
            a, z = _dense_forward(x, p, spec.activation)
            cache.update(x=x, z=z)
            return a, cache
        a = np.empty((x.shape[0], spec.width))
        xc = x[~inc]
        ac, zc = _dense_forward(xc, p, spec.activation)
        a[~inc] = ac
        a[inc], cache["gen"] = act.relu_layer_forward(p["W"], p["b"], model.density,
                                                      x[inc], miss[inc])
        cache.update(x=xc, z=zc)
        return a, cache
    if not inc.any():
        a, cache["rbf"] = act.rbf_classical_forward(p["centers"], p["log_widths"], x)
        return a, cache
    a = np.empty((x.shape[0], spec.width))
    a[~inc], cache["rbf"] = act.rbf_classical_forward(p["centers"], p["log_widths"], x[~inc])
    a[inc], cache["gen"] = act.rbf_layer_forward(p["centers"], p["log_widths"], model.density,
                                                 x[inc], miss[inc])
    return a, cache


def _first_layer_backward(model, cache, G):
    spec, p = model.layers[0], model.params[0]
    inc = cache["inc"]
    dens = None
    all_complete = not inc.any()
    Gc = G if all_complete else G[~inc]
    if spec.kind in ("dense", "generalized-relu"):
        dz = _activate_backward(Gc, cache["z"], None, spec.activation)
        grads = {"W": cache["x"].T @ dz, "b": dz.sum(axis=0)}
        if not all_complete:
            gu, dens = act.relu_layer_backward(cache["gen"], G[inc])
            grads = {"W": grads["W"] + gu["W"], "b": grads["b"] + gu["b"]}
    else:
        grads = act.rbf_classical_backward(cache["rbf"], Gc)
        if not all_complete:
            gu, dens = act.rbf_layer_backward(cache["gen"], G[inc])
            grads = {k: grads[k] + gu[k] for k in grads}
    return grads, dens


def _prepare(model, x, miss):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if miss is None:
        miss = np.isnan(x)
    miss = np.atleast_2d(np.asarray(miss, dtype=bool))
    if x.shape[1] != model.input_dim or miss.shape != x.shape:
        raise InvalidArgument(f"expected inputs of width {model.input_dim}, got {x.shape}")
    return x, miss


def forward_batch(model, x, miss=None, return_cache=False):
    x, miss = _prepare(model, x, miss)
    a, first = _first_layer_forward(model, x, miss)
    caches = [first]
    for spec, p in zip(model.layers[1:], model.params[1:]):
        inp = a
        a, z = _dense_forward(inp, p, spec.activation)
        caches.append({"x": inp, "z": z, "a": a})
    if return_cache:
        return a, caches
    return a


def forward(model, point):
    """Network output for a single MissingPoint."""
    if point.d != model.input_dim:
        raise InvalidArgument(f"point has {point.d} coordinates, network expects {model.input_dim}")
    return forward_batch(model, point.values[None, :], point.mask[None, :])[0]


# --------------------------------------------------------------------------
# losses


def loss_masked_mse(pred, target):
    """Mean squared error over the target's observed coordinates (0 if none)."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != target.values.shape:
        raise InvalidArgument("prediction and target shapes differ")
    obs = ~target.mask
    if not obs.any():
        return 0.0
    d = pred[obs] - target.values[obs]
    return float(np.mean(d * d))


def loss_cross_entropy(logits, label):
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise InvalidArgument(f"label {label} outside [0, {logits.shape[0]})")
    m = logits.max()
    return float(m + math.log(np.sum(np.exp(logits - m))) - logits[label])


def _batch_loss(model, out, z_last, targets):
    """Mean loss over the batch and its gradient w.r.t. the last pre-activation."""
    B = out.shape[0]
    if model.loss == "cross-entropy":
        labels = np.asarray(targets, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= out.shape[1]:
            raise InvalidArgument("label out of range")
        m = z_last.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(z_last - m).sum(axis=1, keepdims=True)))[:, 0]
        loss = float(np.mean(lse - z_last[np.arange(B), labels]))
        dz = out.copy()
        dz[np.arange(B), labels] -= 1.0
        return loss, dz / B
    tvals, tmask = targets
    obs = ~np.asarray(tmask, dtype=bool)
    n_obs = obs.sum(axis=1)
    diff = np.where(obs, out - np.where(obs, tvals, 0.0), 0.0)
    scale = np.divide(1.0, n_obs, out=np.zeros(B), where=n_obs > 0)
    loss = float(np.mean(np.sum(diff * diff, axis=1) * scale))
    dout = 2.0 * diff * scale[:, None] / B
    return loss, _activate_backward(dout, z_last, out, model.layers[-1].activation)


def backward(model, x, miss, targets):
    """Loss and exact gradients for a batch.

    ``targets`` is an integer label array (cross-entropy) or a pair
    (values, mask) (masked-mse). Returns (loss, layer_grads, density_grads);
    density_grads is None for classical networks and zero when the batch is
    complete.
    """
    x, miss = _prepare(model, x, miss)
    out, caches = forward_batch(model, x, miss, return_cache=True)
    z_last = caches[-1]["z"] if len(caches) > 1 else None
    if z_last is None:
        raise InvalidArgument("the output layer must be a dense layer")
    loss, dz = _batch_loss(model, out, z_last, targets)
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, 0, -1):
        c = caches[i]
        if i < len(model.layers) - 1:
            dz = _activate_backward(G, c["z"], c["a"], model.layers[i].activation)
        p = model.params[i]
        grads[i] = {"W": c["x"].T @ dz, "b": dz.sum(axis=0)}
        G = dz @ p["W"].T
    grads[0], dens = _first_layer_backward(model, caches[0], G)
    if model.generalized and dens is None:
        d = model.density
        dens = {"logits": np.zeros(d.k), "means": np.zeros_like(d.means),
                "log_vars": np.zeros_like(d.log_vars)}
    return loss, grads, dens


def gradient_list(model, grads, dens):
    """Flatten gradients in the order of ``model.parameter_arrays``."""
    out = [g[name] for g in grads for name in sorted(g)]
    if model.density is not None and model.generalized:
        out += [dens["logits"], dens["means"], dens["log_vars"]]
    return out


# --------------------------------------------------------------------------
# optimizers and training


class Adam:
    def __init__(self, arrays, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, scales=None):
        self.arrays = arrays
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.scales = scales or [1.0] * len(arrays)
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v, s in zip(self.arrays, grads, self.m, self.v, self.scales):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= (self.lr * s) * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, arrays, lr=1e-2, scales=None):
        self.arrays = arrays
        self.lr = lr
        self.scales = scales or [1.0] * len(arrays)

    def step(self, grads):
        for a, g, s in zip(self.arrays, grads, self.scales):
            a -= (self.lr * s) * g


def make_optimizer(model, cfg):
    pairs = model.parameter_arrays()
    arrays = [a for a, _ in pairs]
    scales = [cfg.gmm_lr_scale if dens else 1.0 for _, dens in pairs]
    if cfg.optimizer == "adam":
        return Adam(arrays, cfg.lr, cfg.betas, cfg.eps, scales)
    return SGD(arrays, cfg.lr, scales)


@dataclass
class TrainResult:
    model: NetworkModel
    history: list = field(default_factory=list)


def accuracy(model, x, miss, labels):
    out = forward_batch(model, x, miss)
    return float(np.mean(np.argmax(out, axis=1) == np.asarray(labels)))


def masked_mse(model, x, miss, tvals=None, tmask=None):
    out = forward_batch(model, x, miss)
    tvals = x if tvals is None else tvals
    tmask = miss if tmask is None else tmask
    obs = ~np.asarray(tmask, dtype=bool)
    d = np.where(obs, out - np.where(obs, tvals, 0.0), 0.0)
    return float(np.sum(d * d) / max(obs.sum(), 1))


def _targets(model, data, idx, target_values, target_mask):
    if model.loss == "cross-entropy":
        return data.labels[idx]
    tv = data.values if target_values is None else target_values
    tm = data.mask if target_mask is None else target_mask
    return tv[idx], tm[idx]


def evaluate(model, data):
    """Accuracy for classifiers, masked MSE on observed entries for regressors."""
    if model.loss == "cross-entropy":
        return accuracy(model, data.values, data.mask, data.labels)
    return masked_mse(model, data.values, data.mask)


def train(model, data, cfg, val=None, target_values=None, target_mask=None, log=None,
          checkpoint=None):
    """Minibatch training of all layer and density parameters.

    ``data`` is a DatasetWithMask. For masked-mse the targets default to
    the inputs themselves (loss on observed entries only). ``checkpoint``,
    if given, is called as checkpoint(epoch, model) after every epoch.
    """
    model = model.copy()
    if data.values.shape[1] != model.input_dim:
        raise InvalidArgument("data width differs from the network input")
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = data.values.shape[0]
    history = []
    best = None
    since_best = 0
    higher_better = model.loss == "cross-entropy"
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, dens = backward(model, data.values[idx], data.mask[idx],
                                         _targets(model, data, idx, target_values, target_mask))
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            opt.step(gradient_list(model, grads, dens))
            if model.density is not None and model.generalized:
                model.density.floor_variances(VAR_FLOOR)
            total += loss * len(idx)
        record = {"epoch": epoch, "train_loss": total / n}
        if not all(np.all(np.isfinite(a)) for a, _ in model.parameter_arrays()):
            raise TrainingDiverged(epoch, record["train_loss"])
        if val is not None:
            metric = evaluate(model, val)
            record["val_metric"] = metric
            score = metric if higher_better else -metric
            if best is None or score > best[0]:
                best = (score, model.copy())
                since_best = 0
            else:
                since_best += 1
        history.append(record)
        if log is not None:
            log(record)
        if checkpoint is not None:
            checkpoint(epoch, model)
        if cfg.patience is not None and val is not None and since_best >= cfg.patience:
            break
    if cfg.patience is not None and best is not None:
        model = best[1]
    return TrainResult(model, history)


__all__ = [
    "LayerSpec", "TrainConfig", "NetworkModel", "forward", "forward_batch", "backward",
    "loss_masked_mse", "loss_cross_entropy", "train", "TrainResult", "Adam", "SGD",
    "accuracy", "masked_mse", "evaluate", "gradient_list", "MissingPoint",
]
