"""Dense-network numerics: MLP forward/backward, Adam, inverted dropout, MSE.

Everything here operates on plain numpy arrays (float32 parameters and
activations, float64 accumulation in reductions). Inputs may be a single
vector or a batch (rows = samples).
"""

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Shape of an input does not match what the model expects."""


def _as_f32(a):
    return np.asarray(a, dtype=np.float32)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.weights = _as_f32(self.weights)
        self.bias = _as_f32(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError(
                f"weights must be 2-d and bias 1-d, got {self.weights.ndim}-d / {self.bias.ndim}-d"
            )
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class Mlp:
    """Feed-forward network: ReLU on every layer output except the last (identity)."""

    layers: list  # list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def layer_dims(self):
        return [self.input_dim] + [l.out_dim for l in self.layers]

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...], the order used everywhere."""
        out = []
        for l in self.layers:
            out.append(l.weights)
            out.append(l.bias)
        return out

    def set_parameters(self, params):
        if len(params) != 2 * len(self.layers):
            raise DimensionError(
                f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}"
            )
        for i, l in enumerate(self.layers):
            l.weights = _as_f32(params[2 * i]).reshape(l.weights.shape)
            l.bias = _as_f32(params[2 * i + 1]).reshape(l.bias.shape)


@dataclass
class DropoutSpec:
    rate: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


def init_mlp(dims, seed):
    """He-style uniform init (scaled by fan-in), deterministic for a seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(np.float32)
        b = np.zeros(fan_out, dtype=np.float32)
        layers.append(DenseLayer(w, b))
    return Mlp(layers)


def _check_input(model, x):
    # float64 inputs stay float64 (high-precision optimization loops);
    # everything else becomes float32
    x = np.asarray(x)
    if x.dtype != np.float64:
        x = x.astype(np.float32)
    if x.ndim not in (1, 2):
        raise DimensionError(f"input must be 1-d or 2-d, got {x.ndim}-d")
    if x.shape[-1] != model.input_dim:
        raise DimensionError(
            f"input dim {x.shape[-1]} != model input dim {model.input_dim}"
        )
    return x


def _dropout_masks(model, dropout, batch_shape):
    """One keep-mask per hidden layer; scaled for inverted dropout."""
    rng = np.random.default_rng(dropout.seed)
    masks = []
    for l in model.layers[:-1]:
        keep = rng.random(batch_shape + (l.out_dim,)) >= dropout.rate
        masks.append(keep.astype(np.float32) / np.float32(1.0 - dropout.rate))
    return masks


def _forward_cached(model, x, dropout):
    """Returns (output, pre_activations, post_activations) with x as post[0]."""
    masks = _dropout_masks(model, dropout, x.shape[:-1]) if dropout else None
    pre = []
    post = [x]
    a = x
    n = len(model.layers)
    for i, l in enumerate(model.layers):
        z = a @ l.weights.T + l.bias
        pre.append(z)
        if i < n - 1:
            a = np.maximum(z, 0.0)
            if masks is not None:
                a = a * masks[i]
        else:
            a = z
        post.append(a)
    return a, pre, post, masks


def mlp_forward(model, x, dropout=None):
    """Forward pass. `dropout` (training mode only) applies inverted dropout to
    each hidden layer's output, deterministically for a fixed seed."""
    x = _check_input(model, x)
    out, _, _, _ = _forward_cached(model, x, dropout)
    return out


def mlp_backward(model, x, upstream_grad, dropout=None):
    """Exact chain-rule gradients of the forward map.

    Returns (param_grads, input_grad) where param_grads matches
    model.parameters() order. For batched input, parameter gradients are
    summed over the batch and input_grad has one row per sample.
    """
    x = _check_input(model, x)
    g = np.asarray(upstream_grad)
    if g.dtype != np.float64:
        g = g.astype(np.float32)
    if g.shape[-1] != model.output_dim:
        raise DimensionError(
            f"upstream grad dim {g.shape[-1]} != model output dim {model.output_dim}"
        )
    if g.shape[:-1] != x.shape[:-1]:
        raise DimensionError(
            f"upstream grad batch shape {g.shape[:-1]} != input batch shape {x.shape[:-1]}"
        )
    _, pre, post, masks = _forward_cached(model, x, dropout)

    batched = x.ndim == 2
    param_grads = [None] * (2 * len(model.layers))
    delta = g
    for i in reversed(range(len(model.layers))):
        l = model.layers[i]
        a_in = post[i]
        if batched:
            dw = delta.T @ a_in
            db = delta.sum(axis=0)
        else:
            dw = np.outer(delta, a_in)
            db = delta
        param_grads[2 * i] = dw.astype(np.float32)
        param_grads[2 * i + 1] = db.astype(np.float32)
        delta = delta @ l.weights
        if i > 0:
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    return param_grads, delta.astype(x.dtype)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def _init_moments(self, params):
        self.first_moment = [np.zeros_like(p) for p in params]
        self.second_moment = [np.zeros_like(p) for p in params]


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Mutates state, returns new param list."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params vs {len(grads)} grads")
    if not state.first_moment:
        state._init_moments(params)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(
                f"param {i} shape {p.shape} != grad shape {g.shape}"
            )
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        out.append((p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype))
    return out


def mse_loss(pred, target):
    """Mean squared error over all elements, with its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float32)
    target = np.asarray(target, dtype=np.float32)
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(np.float32)
