"""Training and applying affect-prediction models.

Two flavors: a single joint-space model (512-dim CLIP-style embeddings,
words and images together) and a 77-member ensemble of per-channel models
(768-dim prompt-encoder channels, words only).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataio, nn
from .nn import AdamState, DimensionError, DropoutSpec, Mlp

HIDDEN_DIMS = (64, 32)
N_CHANNELS = 77
JOINT_DIM = 512
CHANNEL_DIM = 768


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1500
    dropout_rate: float = 0.2
    train_fraction: float = 0.7
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.lr <= 0 or self.batch_size <= 0:
            raise ValueError("lr and batch_size must be positive")


@dataclass
class AffectModel:
    mlp: Mlp
    embedding_scaler: dataio.Scaler
    target_scaler: dataio.Scaler
    kind: str = "joint"  # "joint" or "channel"
    channel_index: int | None = None

    def __post_init__(self):
        if self.mlp.output_dim != 3:
            raise DimensionError(f"affect model must output 3 values, got {self.mlp.output_dim}")
        if self.mlp.input_dim != self.embedding_scaler.dim:
            raise DimensionError(
                f"embedding scaler dim {self.embedding_scaler.dim} != model input dim {self.mlp.input_dim}"
            )

    @property
    def input_dim(self):
        return self.mlp.input_dim


@dataclass
class ChannelEnsemble:
    models: list  # 77 AffectModel, ordered by channel

    def __post_init__(self):
        if len(self.models) != N_CHANNELS:
            raise DimensionError(f"ensemble needs {N_CHANNELS} models, got {len(self.models)}")
        for c, m in enumerate(self.models):
            if m.channel_index != c:
                raise ValueError(f"model at position {c} has channel_index {m.channel_index}")


@dataclass
class TrainingReport:
    epoch_losses: list = field(default_factory=list)
    test_mae: float | None = None
    test_rmse: float | None = None
    per_dimension_mae: list | None = None
    n_train: int = 0
    n_test: int = 0
    config: TrainConfig | None = None

    def to_dict(self):
        d = {
            "n_train": self.n_train,
            "n_test": self.n_test,
            "test_mae": self.test_mae,
            "test_rmse": self.test_rmse,
            "per_dimension_mae": self.per_dimension_mae,
            "epoch_losses": self.epoch_losses,
        }
        if self.config is not None:
            d["config"] = vars(self.config)
        return d

    def table(self):
        lines = ["epoch\ttrain_loss"]
        lines += [f"{i + 1}\t{loss:.6g}" for i, loss in enumerate(self.epoch_losses)]
        if self.test_mae is not None:
            lines.append(f"final\ttest_mae={self.test_mae:.6g}")
        return "\n".join(lines)


def _train_mlp(inputs, targets, config, init_seed):
    """Minibatch Adam/MSE training loop on already-scaled data."""
    dim = inputs.shape[1]
    mlp = nn.init_mlp([dim, *HIDDEN_DIMS, 3], init_seed)
    state = AdamState(lr=config.lr)
    params = mlp.parameters()
    losses = []
    n = len(inputs)
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x, y = inputs[idx], targets[idx]
            dropout = (
                DropoutSpec(config.dropout_rate, seed=hash((config.seed, step)) & 0x7FFFFFFF)
                if config.dropout_rate > 0
                else None
            )
            pred = nn.mlp_forward(mlp, x, dropout)
            loss, grad = nn.mse_loss(pred, y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}")
            epoch_loss += loss * len(idx)
            param_grads, _ = nn.mlp_backward(mlp, x, grad, dropout)
            params = nn.adam_step(params, param_grads, state)
            mlp.set_parameters(params)
            step += 1
        losses.append(epoch_loss / n)
    return mlp, losses


def train_affect_model(dataset, config, kind="joint", channel_index=None):
    """Split, fit scalers on the training split, train, evaluate.

    Fully deterministic for a fixed config. Returns (AffectModel,
    TrainingReport); the report's test MAE is on the [0,1] target scale.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    train, test = dataio.split_dataset(dataset, config.train_fraction, config.seed)
    if len(train) == 0 or len(test) == 0:
        raise ValueError(f"degenerate split: {len(train)} train / {len(test)} test items")

    emb_scaler = dataio.fit_scaler(train.inputs)
    tgt_scaler = dataio.fit_scaler(train.targets)
    x_train = dataio.apply_scaler(emb_scaler, train.inputs)
    y_train = dataio.apply_scaler(tgt_scaler, train.targets)

    mlp, losses = _train_mlp(x_train, y_train, config, init_seed=config.seed)
    model = AffectModel(mlp, emb_scaler, tgt_scaler, kind=kind, channel_index=channel_index)

    preds = score(model, test.inputs)
    y_test = np.clip(dataio.apply_scaler(tgt_scaler, test.targets), 0.0, 1.0)
    abs_err = np.abs(preds.astype(np.float64) - y_test.astype(np.float64))
    report = TrainingReport(
        epoch_losses=losses,
        test_mae=float(abs_err.mean()),
        test_rmse=float(np.sqrt((abs_err**2).mean())),
        per_dimension_mae=[float(v) for v in abs_err.mean(axis=0)],
        n_train=len(train),
        n_test=len(test),
        config=config,
    )
    return model, report


def train_channel_ensemble(channel_datasets, config, threads=1):
    """Train the 77 per-channel models independently (words only).

    Each channel trains with seed = config.seed + channel, so results do not
    depend on thread scheduling. Returns (ChannelEnsemble, list of reports).
    """
    if len(channel_datasets) != N_CHANNELS:
        raise DimensionError(
            f"expected {N_CHANNELS} per-channel datasets, got {len(channel_datasets)}"
        )

    def train_one(c):
        ds = channel_datasets[c]
        cfg = TrainConfig(**{**vars(config), "seed": config.seed + c})
        try:
            return train_affect_model(ds, cfg, kind="channel", channel_index=c)
        except Exception as e:
            raise TrainingError(f"channel {c}: {e}") from e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(train_one, range(N_CHANNELS)))
    else:
        results = [train_one(c) for c in range(N_CHANNELS)]
    models = [m for m, _ in results]
    reports = [r for _, r in results]
    return ChannelEnsemble(models), reports


def score_raw(model, embedding):
    """Scale the embedding and run the network; no dropout, no clamping.

    This is the differentiable map the steering losses are built on.
    """
    x = dataio.apply_scaler(model.embedding_scaler, embedding)
    return nn.mlp_forward(model.mlp, x)


def score(model, embedding):
    """Affect scores clamped to [0,1]; accepts a single vector or a batch."""
    return np.clip(score_raw(model, embedding), 0.0, 1.0)


def score_raw_grad(model, embedding, upstream_grad):
    """Gradient of score_raw w.r.t. the unscaled embedding."""
    x = dataio.apply_scaler(model.embedding_scaler, embedding)
    _, input_grad = nn.mlp_backward(model.mlp, x, upstream_grad)
    rng = model.embedding_scaler.range
    scale = np.where(rng == 0, 0.0, 1.0 / np.where(rng == 0, 1.0, rng))
    return (input_grad * scale).astype(x.dtype)


def score_grid(ensemble, grid):
    """Score channel c of a (77, dim) grid with model c; order preserved."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2 or grid.shape[0] != N_CHANNELS:
        raise DimensionError(
            f"grid must be ({N_CHANNELS}, dim), got {grid.shape}"
        )
    return np.stack([score(m, grid[c]) for c, m in enumerate(ensemble.models)])


def save_affect_model(path, model, training_meta=None):
    dataio.save_model_file(
        path,
        [(model.mlp, model.embedding_scaler, model.target_scaler)],
        kind=model.kind,
        training_meta=training_meta,
    )


def save_ensemble(path, ensemble, training_meta=None):
    dataio.save_model_file(
        path,
        [(m.mlp, m.embedding_scaler, m.target_scaler) for m in ensemble.models],
        kind="channel",
        training_meta=training_meta,
    )


def load_affect_model(path):
    """Load either a single joint model or a channel ensemble.

    Returns an AffectModel or a ChannelEnsemble depending on the file.
    """
    models, header = dataio.load_model_file(path)
    kind = header.get("kind", "joint")
    if kind == "joint":
        if len(models) != 1:
            raise dataio.FormatError(f"joint model file holds {len(models)} models")
        mlp, emb, tgt = models[0]
        return AffectModel(mlp, emb, tgt, kind="joint")
    return ChannelEnsemble(
        [
            AffectModel(mlp, emb, tgt, kind="channel", channel_index=c)
            for c, (mlp, emb, tgt) in enumerate(models)
        ]
    )
