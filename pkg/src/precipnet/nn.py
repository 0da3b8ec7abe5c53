"""
Dense feed-forward networks in numpy: forward and backward propagation,
ReLU/SoftMax/linear activations, batch normalization, inverted dropout,
cross-entropy and Lp losses, RMSProp and early-stopped mini-batch training.

Weights are stored ``(n_in, n_out)`` so a layer maps ``a @ W + b``. Batch
normalized layers have no trainable bias (their shift ``beta`` replaces it).
"""
import copy
import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ParseError, TrainingError

ACTIVATIONS = ("relu", "softmax", "linear")
PROB_CLAMP = 1e-12
BN_MOMENTUM = 0.9
BN_EPS = 1e-5
IMPROVEMENT_TOL = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    n_in: int
    n_out: int
    activation: str = "relu"
    batch_norm: bool = False
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.n_in < 1 or self.n_out < 1:
            raise ConfigError("layer widths must be positive")


def dense_stack(n_in, hidden, n_out, output_activation, batch_norm=False,
                dropout_rate=0.0):
    """Layer specs for ``n_in -> hidden... -> n_out`` with ReLU hidden layers."""
    widths = [n_in] + list(hidden)
    specs = [LayerSpec(a, b, "relu", batch_norm, dropout_rate)
             for a, b in zip(widths[:-1], widths[1:])]
    specs.append(LayerSpec(widths[-1], n_out, output_activation))
    return specs


def validate_specs(specs):
    if not specs:
        raise ConfigError("a network needs at least one layer")
    for i, spec in enumerate(specs):
        if spec.activation == "softmax" and i != len(specs) - 1:
            raise ConfigError("softmax is only allowed on the final layer")
        if i > 0 and spec.n_in != specs[i - 1].n_out:
            raise ConfigError(f"layer {i} n_in does not match layer {i - 1} n_out")
    if specs[-1].dropout_rate != 0.0:
        raise ConfigError("the output layer cannot use dropout")


class NetworkParams:
    """Weights, biases, batch-norm state and input standardization."""

    def __init__(self, layers, weights, biases, bn=None, input_mean=None,
                 input_std=None):
        validate_specs(layers)
        self.layers = list(layers)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.bn = bn if bn is not None else [
            _fresh_bn(s.n_out) if s.batch_norm else None for s in layers]
        n0 = layers[0].n_in
        self.input_mean = (np.zeros(n0) if input_mean is None
                           else np.asarray(input_mean, dtype=np.float64))
        self.input_std = (np.ones(n0) if input_std is None
                          else np.asarray(input_std, dtype=np.float64))
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (spec.n_in, spec.n_out) or b.shape != (spec.n_out,):
                raise ConfigError("parameter shapes do not match layer specs")

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def trainable(self):
        """Trainable arrays in canonical order (W, b | W, gamma, beta per layer)."""
        out = []
        for spec, w, b, bn in zip(self.layers, self.weights, self.biases, self.bn):
            out.append(w)
            if spec.batch_norm:
                out.extend([bn["gamma"], bn["beta"]])
            else:
                out.append(b)
        return out

    def n_parameters(self):
        return sum(a.size for a in self.trainable())

    def copy(self):
        return copy.deepcopy(self)

    def all_finite(self):
        arrays = self.trainable() + [self.input_mean, self.input_std]
        arrays += [bn[k] for bn in self.bn if bn is not None for k in ("mean", "var")]
        return all(np.all(np.isfinite(a)) for a in arrays)

    def equals(self, other):
        if self.layers != other.layers:
            return False
        mine = self.trainable() + [self.input_mean, self.input_std]
        theirs = other.trainable() + [other.input_mean, other.input_std]
        mine += [bn[k] for bn in self.bn if bn is not None for k in ("mean", "var")]
        theirs += [bn[k] for bn in other.bn if bn is not None for k in ("mean", "var")]
        return all(np.array_equal(a, b) for a, b in zip(mine, theirs))


def _fresh_bn(n):
    return {"gamma": np.ones(n), "beta": np.zeros(n),
            "mean": np.zeros(n), "var": np.ones(n)}


def init_network(specs, seed=0, input_mean=None, input_std=None,
                 output_bias=None):
    """He-style init: uniform weights with variance 2 / n_in, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        bound = math.sqrt(6.0 / spec.n_in)
        weights.append(rng.uniform(-bound, bound, size=(spec.n_in, spec.n_out)))
        biases.append(np.zeros(spec.n_out))
    if output_bias is not None:
        biases[-1] = np.broadcast_to(np.asarray(output_bias, dtype=float),
                                     (specs[-1].n_out,)).copy()
    return NetworkParams(specs, weights, biases, input_mean=input_mean,
                         input_std=input_std)


def standardization(x):
    """Per-feature z-score statistics; constant features get unit scale."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[~(std > 0.0)] = 1.0
    return mean, std


###############################################################################
# Activations and losses
###############################################################################


def relu(z):
    return np.maximum(z, 0.0)


def softmax(v):
    """Row-wise SoftMax with max subtraction (works on vectors and batches)."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(probs, target):
    """Mean categorical cross-entropy with probabilities clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch {probs.shape} vs {target.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0)
    per_sample = -np.sum(target * np.log(p), axis=-1)
    return float(np.mean(per_sample)) + 0.0


def cross_entropy_grad(probs, target):
    probs = np.atleast_2d(probs)
    target = np.atleast_2d(target)
    live = probs > PROB_CLAMP
    g = np.zeros_like(probs)
    g[live] = -target[live] / probs[live]
    return g / len(probs)


def lp_loss(pred, target, p):
    """(1/M) sum |pred - target|^p over the M rows."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    r = np.abs(pred - target) ** p
    m = len(pred) if pred.ndim else 1
    return float(np.sum(r) / m)


def lp_grad(pred, target, p):
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    r = pred - target
    g = np.sign(r) if p == 1 else 2.0 * r
    return g / len(pred)


###############################################################################
# Propagation
###############################################################################


@dataclass
class ForwardCache:
    """Intermediates of a train-mode forward pass needed by :func:`backward`."""

    inputs: list = field(default_factory=list)     # a^{l-1}
    pre: list = field(default_factory=list)        # z = a W + b
    bn: list = field(default_factory=list)         # (zhat, inv_std) or None
    act_in: list = field(default_factory=list)     # input to the activation
    act_out: list = field(default_factory=list)    # activation output
    masks: list = field(default_factory=list)      # scaled dropout masks or None
    running: list = field(default_factory=list)    # updated BN running stats
    output: np.ndarray = None
    n_params_id: int = 0


def forward(net, batch, mode="infer", seed=0, masks=None):
    """Propagate ``batch`` through the network.

    ``mode="train"`` uses batch statistics and dropout (Bernoulli keep masks
    with inverted scaling, drawn from ``seed`` unless ``masks`` forces them)
    and returns ``(output, cache)``. ``mode="infer"`` uses running statistics,
    no dropout, and returns the output only.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != net.n_in:
        raise ValueError(f"batch width {x.shape[1]} != network input {net.n_in}")
    train = mode == "train"
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed) if train else None
    cache = ForwardCache() if train else None
    a = (x - net.input_mean) / net.input_std
    last = len(net.layers) - 1
    for l, (spec, w, b, bn) in enumerate(zip(net.layers, net.weights, net.biases, net.bn)):
        z = a @ w
        if not spec.batch_norm:
            z = z + b
        bn_cache = None
        running = None
        if spec.batch_norm:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                zhat = (z - mu) * inv_std
                bn_cache = (zhat, inv_std)
                m = len(z)
                unbiased = var * m / (m - 1) if m > 1 else var
                running = {
                    "mean": BN_MOMENTUM * bn["mean"] + (1.0 - BN_MOMENTUM) * mu,
                    "var": BN_MOMENTUM * bn["var"] + (1.0 - BN_MOMENTUM) * unbiased,
                }
            else:
                zhat = (z - bn["mean"]) / np.sqrt(bn["var"] + BN_EPS)
            y = bn["gamma"] * zhat + bn["beta"]
        else:
            y = z
        if spec.activation == "relu":
            out = relu(y)
        elif spec.activation == "softmax":
            out = softmax(y)
        else:
            out = y
        mask = None
        if train and l != last:
            if masks is not None and masks[l] is not None:
                mask = np.asarray(masks[l], dtype=np.float64)
            elif spec.dropout_rate > 0.0:
                keep = 1.0 - spec.dropout_rate
                mask = (rng.random(out.shape) < keep) / keep
            if mask is not None:
                out = out * mask
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite activations in layer {l}")
        if train:
            cache.inputs.append(a)
            cache.pre.append(z)
            cache.bn.append(bn_cache)
            cache.act_in.append(y)
            cache.act_out.append(out)
            cache.masks.append(mask)
            cache.running.append(running)
        a = out
    if train:
        cache.output = a
        cache.n_params_id = id(net)
        return a, cache
    return a


def predict(net, batch, chunk=65536):
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if len(x) <= chunk:
        return forward(net, x, "infer")
    return np.concatenate([forward(net, x[i:i + chunk], "infer")
                           for i in range(0, len(x), chunk)])


def backward(net, cache, loss_gradient):
    """Gradients of the loss w.r.t. :meth:`NetworkParams.trainable`, same order.

    ``loss_gradient`` is dL/d(output) for the batch the cache was built on.
    """
    if cache is None or cache.output is None or cache.n_params_id != id(net):
        raise ValueError("backward needs the cache of a train-mode forward on this network")
    g = np.asarray(loss_gradient, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ValueError("loss gradient shape does not match the cached output")
    grads = []
    for l in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[l]
        if cache.masks[l] is not None:
            g = g * cache.masks[l]
        if spec.activation == "relu":
            g = g * (cache.act_in[l] > 0.0)
        elif spec.activation == "softmax":
            p = cache.act_out[l] if cache.masks[l] is None else softmax(cache.act_in[l])
            g = p * (g - np.sum(g * p, axis=1, keepdims=True))
        layer_grads = []
        if spec.batch_norm:
            zhat, inv_std = cache.bn[l]
            gamma = net.bn[l]["gamma"]
            dgamma = np.sum(g * zhat, axis=0)
            dbeta = np.sum(g, axis=0)
            dzhat = g * gamma
            m = len(g)
            g = (inv_std / m) * (m * dzhat - dzhat.sum(axis=0)
                                 - zhat * np.sum(dzhat * zhat, axis=0))
            layer_grads = [dgamma, dbeta]
        else:
            layer_grads = [np.sum(g, axis=0)]
        dw = cache.inputs[l].T @ g
        grads = [dw] + layer_grads + grads
        g = g @ net.weights[l].T
    return grads


def commit_running_stats(net, cache):
    for bn, running in zip(net.bn, cache.running):
        if bn is not None and running is not None:
            bn["mean"] = running["mean"]
            bn["var"] = running["var"]


###############################################################################
# Optimization
###############################################################################


@dataclass
class TrainConfig:
    loss: str = "cross_entropy"     # or "lp"
    p: int = 1
    learning_rate: float = 1e-4
    batch_size: int = 1000
    max_epochs: int = 500
    patience: int = 25
    dropout: bool = True
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("cross_entropy", "lp"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.loss == "lp" and self.p not in (1, 2):
            raise ConfigError("lp loss needs p in {1, 2}")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if not self.learning_rate > 0.0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.rmsprop_decay < 1.0 or not self.rmsprop_epsilon > 0.0:
            raise ConfigError("rmsprop_decay must lie in (0, 1), epsilon > 0")


def loss_value(config, output, target):
    if config.loss == "cross_entropy":
        return cross_entropy(output, target)
    return lp_loss(output, target, config.p)


def loss_gradient(config, output, target):
    if config.loss == "cross_entropy":
        return cross_entropy_grad(output, target)
    return lp_grad(output, target, config.p)


def rmsprop_step(params, grads, accumulator, learning_rate, decay=0.9,
                 epsilon=1e-8):
    """In-place RMSProp update of ``params`` and ``accumulator`` (lists of arrays).

    E <- rho E + (1 - rho) g^2 ;  theta <- theta - eta g / (sqrt(E) + eps)
    """
    updates = []
    for theta, g, e in zip(params, grads, accumulator):
        e_new = decay * e + (1.0 - decay) * g * g
        denom = np.sqrt(e_new) + epsilon
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(g == 0.0, 0.0, learning_rate * g / denom)
        if not np.all(np.isfinite(step)) or not np.all(np.isfinite(e_new)):
            raise NumericError("non-finite RMSProp update")
        updates.append((theta, step, e, e_new))
    for theta, step, e, e_new in updates:
        theta -= step
        e[...] = e_new
    return params, accumulator


def _with_dropout(net, enabled):
    if enabled:
        return net
    quiet = net.copy()
    quiet.layers = [LayerSpec(s.n_in, s.n_out, s.activation, s.batch_norm, 0.0)
                    for s in net.layers]
    return quiet


def evaluate_loss(net, x, y, config, chunk=65536):
    return loss_value(config, predict(net, x, chunk), np.atleast_2d(y).reshape(len(x), -1))


def train(net, train_data, val_data, config, val_loss_fn=None):
    """Mini-batch RMSProp with early stopping on the validation loss.

    Returns ``(best_params, history)``; history rows are
    ``(epoch, train_loss, val_loss)`` with 1-based epochs. Training stops
    after ``patience`` epochs without a validation improvement of at least
    1e-12, or at ``max_epochs``. ``val_loss_fn(net, epoch)`` overrides the
    validation loss (used to drive early stopping deterministically).
    """
    x, y = (np.asarray(a, dtype=np.float64) for a in train_data)
    xv, yv = (np.asarray(a, dtype=np.float64) for a in val_data)
    if len(x) == 0 or len(xv) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    y = y.reshape(len(x), -1)
    yv = yv.reshape(len(xv), -1)
    net = net.copy()
    work = _with_dropout(net, config.dropout)
    rng = np.random.default_rng(config.seed)
    params = work.trainable()
    accumulator = [np.zeros_like(p) for p in params]
    best, best_loss, best_epoch = work.copy(), math.inf, 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(x))
        total = 0.0
        for b, start in enumerate(range(0, len(x), config.batch_size)):
            idx = perm[start:start + config.batch_size]
            try:
                out, cache = forward(work, x[idx], "train",
                                     seed=int(rng.integers(2**63)))
                total += loss_value(config, out, y[idx]) * len(idx)
                grads = backward(work, cache, loss_gradient(config, out, y[idx]))
                rmsprop_step(params, grads, accumulator, config.learning_rate,
                             config.rmsprop_decay, config.rmsprop_epsilon)
            except (NumericError, FloatingPointError) as exc:
                raise TrainingError(str(exc), epoch=epoch, batch=b) from None
            commit_running_stats(work, cache)
            if not work.all_finite():
                raise TrainingError("non-finite parameters", epoch=epoch, batch=b)
        train_loss = total / len(x)
        if val_loss_fn is not None:
            val_loss = float(val_loss_fn(work, epoch))
        else:
            val_loss = evaluate_loss(work, xv, yv, config)
        if not math.isfinite(val_loss) or not math.isfinite(train_loss):
            raise TrainingError("non-finite loss", epoch=epoch, batch=None)
        history.append((epoch, train_loss, val_loss))
        if val_loss <= best_loss - IMPROVEMENT_TOL:
            best, best_loss, best_epoch = work.copy(), val_loss, epoch
        elif epoch - best_epoch >= config.patience:
            break
    best.layers = list(net.layers)
    return best, history


def write_history(path, history):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tl, vl in history:
            writer.writerow([epoch, repr(float(tl)), repr(float(vl))])


###############################################################################
# Gradient checking
###############################################################################


def analytic_gradients(net, x, y, config, seed=0):
    out, cache = forward(net, x, "train", seed=seed)
    return backward(net, cache, loss_gradient(config, out, np.atleast_2d(y).reshape(out.shape)))


def grad_check(net, batch, config, h=1e-5, seed=0, corrupt=None):
    """Max relative error between backprop and central differences.

    Every trainable coordinate is perturbed by +-h with the dropout masks held
    fixed by ``seed``. ``corrupt`` may rewrite the analytic gradients before
    comparison (fault injection).
    """
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    net = net.copy()
    analytic = analytic_gradients(net, x, y, config, seed)
    if corrupt is not None:
        analytic = corrupt([g.copy() for g in analytic])
    y = np.atleast_2d(np.asarray(y, dtype=np.float64)).reshape(len(x), -1)

    def loss_at():
        out, _ = forward(net, x, "train", seed=seed)
        return loss_value(config, out, y)

    worst = 0.0
    for theta, grad in zip(net.trainable(), analytic):
        flat = theta.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


###############################################################################
# Serialization
###############################################################################

MODEL_MAGIC = b"DIEGN"
MODEL_VERSION = 1
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def _f8(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_network(net, path):
    parts = [MODEL_MAGIC, struct.pack("<HH", MODEL_VERSION, len(net.layers))]
    for s in net.layers:
        parts.append(struct.pack("<IIBBd", s.n_in, s.n_out, _ACT_CODES[s.activation],
                                 int(s.batch_norm), s.dropout_rate))
    parts += [_f8(net.input_mean), _f8(net.input_std)]
    for s, w, b, bn in zip(net.layers, net.weights, net.biases, net.bn):
        parts += [_f8(w), _f8(b)]
        if s.batch_norm:
            parts += [_f8(bn[k]) for k in ("gamma", "beta", "mean", "var")]
    Path(path).write_bytes(b"".join(parts))


def load_network(path):
    raw = Path(path).read_bytes()
    if raw[:5] != MODEL_MAGIC:
        raise ParseError(f"{path}: bad model magic", row=0)
    pos = 5
    version, n_layers = struct.unpack_from("<HH", raw, pos)
    pos += 4
    if version != MODEL_VERSION:
        raise ParseError(f"{path}: unsupported model version {version}", row=0)
    layer_fmt = struct.Struct("<IIBBd")
    specs = []
    for _ in range(n_layers):
        n_in, n_out, act, bn, drop = layer_fmt.unpack_from(raw, pos)
        pos += layer_fmt.size
        specs.append(LayerSpec(n_in, n_out, ACTIVATIONS[act], bool(bn), drop))

    def take(n):
        nonlocal pos
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        return arr

    try:
        mean, std = take(specs[0].n_in), take(specs[0].n_in)
        weights, biases, bns = [], [], []
        for s in specs:
            weights.append(take(s.n_in * s.n_out).reshape(s.n_in, s.n_out))
            biases.append(take(s.n_out))
            if s.batch_norm:
                bns.append({k: take(s.n_out) for k in ("gamma", "beta", "mean", "var")})
            else:
                bns.append(None)
    except ValueError:
        raise ParseError(f"{path}: truncated model file", row=0) from None
    if pos != len(raw):
        raise ParseError(f"{path}: trailing bytes in model file", row=0)
    return NetworkParams(specs, weights, biases, bns, mean, std)
