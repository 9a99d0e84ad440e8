"""Small deep network with hand-written backprop for the curvature probe.

Hidden layers are bias-free tanh (or identity) layers; the last layer is
linear and feeds a loss.  With ``normalized=True`` every hidden
pre-activation s = h W^T is rescaled per unit as g * s / sqrt(mean(s^2)),
the full-batch normalization without mean centering, so each row of W
only enters through its direction.

``cross_dependency`` measures how strongly the gradient of one layer
reacts to moving another: the Frobenius norm of the mixed second
derivative block, by central differences of backprop gradients.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_softmax

PROBE_LOSSES = ("cross_entropy", "softplus", "quadratic")
ACTIVATIONS = ("tanh", "identity")


class ProbeDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeData:
    """Inputs (n, d) and targets: class ids, +-1 labels or (n, k) reals, by loss."""
    x: np.ndarray
    y: np.ndarray

    @property
    def n(self):
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class DeepNetProbe:
    weights: tuple
    gains: tuple
    activation: str = "tanh"
    loss: str = "cross_entropy"
    normalized: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in PROBE_LOSSES:
            raise ValueError(f"unknown probe loss {self.loss!r}")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[0] != b.shape[1]:
                raise ValueError(f"layer shapes {a.shape} and {b.shape} do not chain")
        if len(self.gains) != len(self.weights) - 1:
            raise ValueError("need one gain vector per hidden layer")
        if not all(np.all(np.isfinite(w)) for w in self.weights):
            raise ValueError("non-finite weights")

    @classmethod
    def init(cls, sizes, seed=0, activation="tanh", loss="cross_entropy", normalized=False):
        """Gaussian init with variance 1/fan_in; ``sizes`` = [d, hidden..., out]."""
        rng = np.random.default_rng(seed)
        ws = tuple(rng.standard_normal((b, a)) / np.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:]))
        gs = tuple(np.ones(b) for b in sizes[1:-1])
        return cls(ws, gs, activation, loss, normalized)

    @property
    def depth(self):
        """Number of weight matrices (hidden layers plus the output layer)."""
        return len(self.weights)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def with_weights(self, weights, gains=None):
        return replace(self, weights=tuple(weights), gains=self.gains if gains is None else tuple(gains))

    def unit_rows(self):
        """Same network with hidden rows scaled to unit length (a no-op on outputs when normalized)."""
        ws = [w / np.linalg.norm(w, axis=1, keepdims=True) for w in self.weights[:-1]]
        return self.with_weights(ws + [self.weights[-1]])


def _act(kind, a):
    if kind == "tanh":
        h = np.tanh(a)
        return h, 1.0 - h * h
    return a, np.ones_like(a)


def _loss_and_grad(kind, out, y):
    n = out.shape[0]
    if kind == "cross_entropy":
        lp = log_softmax(out, axis=1)
        loss = -np.mean(lp[np.arange(n), y])
        d = np.exp(lp)
        d[np.arange(n), y] -= 1.0
        return loss, d / n
    if kind == "softplus":
        s = -y * out[:, 0]
        loss = np.mean(np.logaddexp(0.0, s))
        d1 = np.exp(-np.logaddexp(0.0, -s))
        return loss, (-y * d1 / n)[:, None]
    r = out - y.reshape(out.shape)
    return np.mean(np.sum(r * r, axis=1)), 2.0 * r / n


def loss_and_grads(net, data):
    """Objective, weight gradients and (normalized mode) gain gradients."""
    h = data.x
    cache = []
    for l, w in enumerate(net.weights[:-1]):
        s = h @ w.T
        if net.normalized:
            r = np.sqrt(np.mean(s * s, axis=0))
            r = np.where(r > 0.0, r, 1.0)
            sh = s / r
            a = net.gains[l] * sh
        else:
            r = sh = None
            a = s
        hn, dact = _act(net.activation, a)
        cache.append((h, s, r, sh, dact))
        h = hn
    out = h @ net.weights[-1].T
    loss, dout = _loss_and_grad(net.loss, out, data.y)

    gw = [None] * net.depth
    gg = [None] * (net.depth - 1)
    gw[-1] = dout.T @ h
    dh = dout @ net.weights[-1]
    n = data.n
    for l in range(net.depth - 2, -1, -1):
        hp, s, r, sh, dact = cache[l]
        da = dh * dact
        if net.normalized:
            gg[l] = np.sum(da * sh, axis=0)
            dsh = da * net.gains[l]
            ds = dsh / r - s * (np.sum(dsh * s, axis=0) / (n * r ** 3))
        else:
            ds = da
        gw[l] = ds.T @ hp
        dh = ds @ net.weights[l]
    return float(loss), gw, gg


def objective(net, data):
    return loss_and_grads(net, data)[0]


def _check_layer(net, i):
    if not 0 <= i < net.depth:
        raise IndexError(f"invalid layer index {i}; network has {net.depth} weight layers")


def _fd_step(w, h):
    return 1e-4 * (1.0 + np.abs(w).max()) if h is None else h


def cross_dependency(net, layer_i, layer_j, source, h=None):
    """|d^2 f / dW_i dW_j|_F from central differences of the layer-i gradient."""
    _check_layer(net, layer_i)
    _check_layer(net, layer_j)
    return _dependency(net, layer_j, source, h)[layer_i]


def dependency_row(net, center, source, h=None):
    """cross_dependency(j, center) for every layer j from one sweep over W_center."""
    _check_layer(net, center)
    return _dependency(net, center, source, h)


def _dependency(net, j, source, h):
    base = net.unit_rows() if net.normalized else net
    wj = base.weights[j]
    step = _fd_step(wj, h)
    acc = [0.0] * base.depth
    for idx in np.ndindex(wj.shape):
        grads = []
        for sgn in (1.0, -1.0):
            w2 = wj.copy()
            w2[idx] += sgn * step
            ws = list(base.weights)
            ws[j] = w2
            grads.append(loss_and_grads(base.with_weights(ws), source)[1])
        for l in range(base.depth):
            col = (grads[0][l] - grads[1][l]) / (2.0 * step)
            acc[l] += float(np.sum(col * col))
    return [np.sqrt(a) for a in acc]


@dataclass(frozen=True)
class ProbeTraceRecord:
    iter: int
    loss: float
    grad_norm: float
    deps: dict


def train_probe(net, mode, steps, lr, lr_g_multiplier=10.0, source=None, dep_every=250,
                center=None, dep_layers=None):
    """Full-batch gradient descent in plain (``gd``) or normalized (``bn_gd``) coordinates.

    Every ``dep_every`` iterations (and at the last one) the dependency of
    the ``center`` layer on each layer in ``dep_layers`` is recorded; the
    defaults are the middle hidden layer against all other hidden layers.
    """
    if mode not in ("gd", "bn_gd"):
        raise ValueError(f"unknown probe mode {mode!r}")
    if source is None:
        raise ValueError("train_probe needs a data source")
    net = replace(net, normalized=(mode == "bn_gd"))
    n_hidden = net.depth - 1
    if center is None:
        center = n_hidden // 2
    if dep_layers is None:
        dep_layers = [l for l in range(n_hidden) if l != center]
    _check_layer(net, center)
    for l in dep_layers:
        _check_layer(net, l)
    trace = []
    for t in range(steps + 1):
        loss, gw, gg = loss_and_grads(net, source)
        gn2 = sum(float(np.sum(g * g)) for g in gw)
        if net.normalized:
            gn2 += sum(float(np.sum(g * g)) for g in gg)
        if not np.isfinite(loss) or loss > 1e6:
            raise ProbeDivergenceError(f"{mode}: loss {loss:.3e} at iteration {t} (lr={lr})")
        deps = {}
        if dep_every and (t % dep_every == 0 or t == steps):
            row = dependency_row(net, center, source)
            deps = {(center, l): row[l] for l in dep_layers}
        trace.append(ProbeTraceRecord(t, loss, float(np.sqrt(gn2)), deps))
        if t == steps:
            break
        ws = [w - lr * g for w, g in zip(net.weights, gw)]
        gs = None
        if net.normalized:
            gs = [g - lr * lr_g_multiplier * d for g, d in zip(net.gains, gg)]
        net = net.with_weights(ws, gs)
    return net, trace


def downstream_median(record, center):
    vals = [v for (i, j), v in record.deps.items() if i == center and j > center]
    return float(np.median(vals)) if vals else float("nan")


def synthetic_probe_data(n, d, k, seed=0, loss="cross_entropy", width=20, label_noise=0.0):
    """Gaussian inputs labelled by a random two-layer tanh teacher.

    ``label_noise`` resamples that fraction of class labels (classification
    losses only) so the data cannot be fit quickly.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w1 = rng.standard_normal((width, d)) / np.sqrt(d)
    kk = 1 if loss == "softplus" else k
    w2 = rng.standard_normal((kk, width)) * 2.0 / np.sqrt(width)
    scores = np.tanh(x @ w1.T) @ w2.T
    if loss == "cross_entropy":
        y = np.argmax(scores + 0.1 * rng.standard_normal(scores.shape), axis=1)
        flip = rng.random(n) < label_noise
        y[flip] = rng.integers(0, k, int(flip.sum()))
    elif loss == "softplus":
        y = np.where(scores[:, 0] >= 0.0, 1.0, -1.0)
        y[rng.random(n) < label_noise] *= -1.0
    else:
        y = scores + 0.1 * rng.standard_normal(scores.shape)
    return ProbeData(x, y)


def least_squares_hessian_norm(x):
    """Frobenius norm of the Hessian 2 X^T X / n of a one-layer linear quadratic fit."""
    return float(np.linalg.norm(2.0 * x.T @ x / x.shape[0]))


def probe_csv_rows(trace):
    """Rows with iter, loss, grad_norm and one dep_{i}_{j} column per pair."""
    keys = sorted({k for r in trace for k in r.deps})
    header = ["iter", "loss", "grad_norm"] + [f"dep_{i}_{j}" for i, j in keys]
    rows = [[r.iter, repr(float(r.loss)), repr(float(r.grad_norm))]
            + [repr(float(r.deps[k])) if k in r.deps else "" for k in keys]
            for r in trace]
    return header, rows
