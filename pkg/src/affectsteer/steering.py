"""Steering machinery: the affect penalty term for generation-by-optimization
loops, the two semantic-loss evaluators, and the prompt-grid optimizer that
pulls an anchor grid toward a target affect while staying close to it.
"""

from dataclasses import dataclass

import numpy as np

from . import dataio, predictor
from .nn import AdamState, DimensionError, adam_step

DIM_INDEX = {"V": 0, "A": 1, "D": 2}
DIM_NAMES = {"V": "Valence", "A": "Arousal", "D": "Dominance"}


class SteeringError(RuntimeError):
    pass


@dataclass
class AffectTarget:
    v0: np.ndarray  # (3,) in [0,1]

    def __post_init__(self):
        self.v0 = np.asarray(self.v0, dtype=np.float32)
        if self.v0.shape != (3,):
            raise DimensionError(f"target must have 3 components, got shape {self.v0.shape}")
        if np.any(self.v0 < 0) or np.any(self.v0 > 1):
            raise ValueError(f"target components must lie in [0,1], got {self.v0}")


def build_target(dimension, direction):
    """Target with 1 (high) or 0 (low) in the chosen dimension, 0.5 elsewhere."""
    dim = dimension[:1].upper()
    if dim not in DIM_INDEX:
        raise ValueError(f"dimension must be one of V, A, D, got {dimension!r}")
    if direction not in ("high", "low"):
        raise ValueError(f"direction must be 'high' or 'low', got {direction!r}")
    v0 = np.full(3, 0.5, dtype=np.float32)
    v0[DIM_INDEX[dim]] = 1.0 if direction == "high" else 0.0
    return AffectTarget(v0)


@dataclass
class SteeringConfig:
    lam: float = 1.0
    max_steps: int = 500
    lr: float = 0.05
    grad_tolerance: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class EmbeddingGrid:
    """A (channels, dim) block of prompt-conditioning values, normally 77x768."""

    values: np.ndarray
    prompt: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DimensionError(f"grid must be 2-d, got {self.values.ndim}-d")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid contains NaN or Inf")

    @property
    def shape(self):
        return self.values.shape


def _models(ensemble):
    return ensemble.models if hasattr(ensemble, "models") else list(ensemble)


def _grid_values(grid):
    if isinstance(grid, EmbeddingGrid):
        return grid.values
    grid = np.asarray(grid)
    return grid if grid.dtype == np.float64 else grid.astype(np.float32)


# ---------------------------------------------------------------------------
# Loss terms

def affect_penalty(model, embedding, target, lam):
    """Penalty lam * ||A(e) - v0||^2 with its exact gradient w.r.t. e.

    A(e) is the unclamped prediction, chained through the model's embedding
    scaler, so the gradient is valid for external optimization loops.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    pred = predictor.score_raw(model, embedding)
    diff = pred.astype(np.float64) - target.v0.astype(np.float64)
    loss = lam * float(np.sum(diff * diff))
    grad = predictor.score_raw_grad(model, embedding, (2.0 * lam * diff).astype(np.float32))
    return loss, grad


def _unit(v, name):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError(f"{name} is the zero vector")
    return v / n


def spherical_distance(u, v):
    """Great-circle-derived distance 2*(arcsin(||u^ - v^||/2))^2 on unit vectors."""
    du = _unit(u, "u")
    dv = _unit(v, "v")
    half_chord = min(np.linalg.norm(du - dv) / 2.0, 1.0)
    return float(2.0 * np.arcsin(half_chord) ** 2)


def cosine_similarity(u, v):
    return float(np.dot(_unit(u, "u"), _unit(v, "v")))


def eval_sd_objective(ensemble, z, anchor, target, lam):
    """Value and gradient of sum_c ||b_c - z_c||^2 + lam*||A_c(z_c) - v0||^2.

    Channels are independent; the gradient has the grid's shape.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    models = _models(ensemble)
    zv = _grid_values(z)
    bv = _grid_values(anchor)
    if zv.shape != bv.shape:
        raise DimensionError(f"grid shape {zv.shape} != anchor shape {bv.shape}")
    if zv.shape[0] != len(models):
        raise DimensionError(f"grid has {zv.shape[0]} channels for {len(models)} models")
    loss = 0.0
    grad = np.empty_like(zv)
    for c, model in enumerate(models):
        dz = zv[c].astype(np.float64) - bv[c].astype(np.float64)
        pred = predictor.score_raw(model, zv[c]).astype(np.float64)
        diff = pred - target.v0.astype(np.float64)
        loss += np.sum(dz * dz) + lam * np.sum(diff * diff)
        grad[c] = 2.0 * dz + predictor.score_raw_grad(
            model, zv[c], (2.0 * lam * diff).astype(np.float32)
        )
    return float(loss), grad


# ---------------------------------------------------------------------------
# Grid optimization

def steer_embedding(ensemble, anchor, target, config):
    """Adam descent on the grid objective, starting from the anchor.

    The learning rate is halved whenever a step would increase the loss, so
    the returned trace is non-increasing. Stops at max_steps, at the gradient
    tolerance, or when no further decrease is achievable.

    Returns (EmbeddingGrid, trace) with trace[0] the anchor's loss.
    """
    anchor_values = _grid_values(anchor)
    prompt = anchor.prompt if isinstance(anchor, EmbeddingGrid) else ""
    # optimize in float64: backtracking needs loss comparisons finer than
    # float32 evaluation noise
    z = anchor_values.astype(np.float64)
    state = AdamState(lr=config.lr)
    loss, grad = eval_sd_objective(ensemble, z, anchor_values, target, config.lam)
    trace = [loss]
    for step in range(config.max_steps):
        if not np.isfinite(loss):
            raise SteeringError(f"non-finite loss at step {step}")
        if np.linalg.norm(grad) < config.grad_tolerance:
            break
        accepted = False
        while state.lr > config.lr * 2.0**-24:
            snap = (
                state.step_count,
                [m.copy() for m in state.first_moment],
                [m.copy() for m in state.second_moment],
            )
            (z_new,) = adam_step([z], [grad], state)
            loss_new, grad_new = eval_sd_objective(
                ensemble, z_new, anchor_values, target, config.lam
            )
            if np.isfinite(loss_new) and loss_new < loss:
                accepted = True
                break
            state.step_count, state.first_moment, state.second_moment = snap
            state.lr *= 0.5
        if not accepted:
            # Adam's momentum direction can point uphill near the optimum;
            # polish with a plain backtracked gradient step and restart Adam.
            lr_gd = config.lr
            while lr_gd > 1e-16:
                z_try = (z - lr_gd * grad).astype(z.dtype)
                loss_new, grad_new = eval_sd_objective(
                    ensemble, z_try, anchor_values, target, config.lam
                )
                if np.isfinite(loss_new) and loss_new < loss:
                    z_new = z_try
                    accepted = True
                    break
                lr_gd *= 0.5
            if accepted:
                state = AdamState(lr=config.lr)
        if not accepted:
            break
        z, loss, grad = z_new, loss_new, grad_new
        trace.append(loss)
        # halving is a transient backtrack; let the rate recover afterwards
        state.lr = min(state.lr * 1.5, config.lr)
    return EmbeddingGrid(z, prompt=prompt), trace


def steered_key(prompt, dimension, direction, lam):
    dim = dimension[:1].upper()
    return f"{prompt}|{dim}{direction}|lambda={lam:g}"


def export_steered(z_star, path, dimension, direction, lam, append=False):
    """Write a steered grid into an embedding container, keyed by prompt and
    target annotation. With append=True, adds a row to an existing file."""
    key = steered_key(z_star.prompt, dimension, direction, lam)
    if append:
        existing = dataio.read_container(path)
        keys = existing.keys + [key]
        data = np.concatenate([existing.data, z_star.values[None]], axis=0)
        container = dataio.EmbeddingContainer(keys, data, existing.meta)
    else:
        container = dataio.EmbeddingContainer([key], z_star.values[None])
    dataio.write_container(path, container)
