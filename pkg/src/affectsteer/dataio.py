"""Data ingestion and binary persistence.

Covers: the VAD lexicon (CSV), min/max scalers, dataset assembly and seeded
splitting, the "AEC1" embedding container, and the "AFM1" model file. Both
binary formats share a layout: 4-byte magic, little-endian u64 header length,
UTF-8 JSON header, then raw little-endian float32 payload.
"""

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .nn import DenseLayer, DimensionError, Mlp

CONTAINER_MAGIC = b"AEC1"
MODEL_MAGIC = b"AFM1"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A binary file does not conform to its declared format."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DuplicateKeyError(FormatError):
    pass


# ---------------------------------------------------------------------------
# Lexicon

@dataclass
class LexiconEntry:
    word: str
    mean: np.ndarray  # (3,) survey-scale V, A, D
    sd: np.ndarray  # (3,) survey-scale standard deviations


#: Column names of the public VAD lexicon (Warriner et al. layout).
DEFAULT_LEXICON_COLUMNS = {
    "word": "Word",
    "v_mean": "V.Mean.Sum",
    "a_mean": "A.Mean.Sum",
    "d_mean": "D.Mean.Sum",
    "v_sd": "V.SD.Sum",
    "a_sd": "A.SD.Sum",
    "d_sd": "D.SD.Sum",
}


def parse_lexicon(path, columns=None):
    """Parse a word/VAD CSV into entries plus a reject report.

    Returns (entries, rejects) where rejects is a list of
    (line_number, reason) tuples. Malformed rows are rejected, never
    silently dropped; a missing required column is fatal.
    """
    cols = dict(DEFAULT_LEXICON_COLUMNS)
    if columns:
        cols.update(columns)
    entries = []
    rejects = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for role, name in cols.items():
            if name not in header:
                raise ValueError(f"lexicon file is missing required column '{name}' (for {role})")
        for lineno, row in enumerate(reader, start=2):
            word = (row.get(cols["word"]) or "").strip()
            if not word:
                rejects.append((lineno, "empty word"))
                continue
            try:
                mean = np.array(
                    [float(row[cols[k]]) for k in ("v_mean", "a_mean", "d_mean")],
                    dtype=np.float32,
                )
                sd = np.array(
                    [float(row[cols[k]]) for k in ("v_sd", "a_sd", "d_sd")],
                    dtype=np.float32,
                )
            except (TypeError, ValueError):
                rejects.append((lineno, "unparseable numeric value"))
                continue
            if np.any(mean < 0) or np.any(mean > 9) or np.any(sd < 0):
                rejects.append((lineno, "value out of range"))
                continue
            entries.append(LexiconEntry(word, mean, sd))
    return entries, rejects


# ---------------------------------------------------------------------------
# Scalers

@dataclass
class Scaler:
    """Per-coordinate min/max affine map onto [0, 1].

    Degenerate coordinates (max == min) map to 0.5 and invert back to min.
    """

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float32)
        self.max = np.asarray(self.max, dtype=np.float32)
        if self.min.shape != self.max.shape:
            raise DimensionError(f"min shape {self.min.shape} != max shape {self.max.shape}")
        if np.any(self.max < self.min):
            raise ValueError("scaler max must be >= min componentwise")

    @property
    def dim(self):
        return self.min.shape[0]

    @property
    def range(self):
        return self.max - self.min


def fit_scaler(vectors):
    """Componentwise extrema of a non-empty list of equal-length vectors."""
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.size == 0:
        raise ValueError("cannot fit a scaler on empty input")
    if arr.ndim == 1:
        arr = arr[None, :]
    return Scaler(arr.min(axis=0), arr.max(axis=0))


def _check_dim(scaler, v):
    v = np.asarray(v)
    if v.dtype != np.float64:
        v = v.astype(np.float32)
    if v.shape[-1] != scaler.dim:
        raise DimensionError(f"vector dim {v.shape[-1]} != scaler dim {scaler.dim}")
    return v


def apply_scaler(scaler, v):
    v = _check_dim(scaler, v)
    rng = scaler.range
    degenerate = rng == 0
    safe = np.where(degenerate, 1.0, rng)
    out = (v - scaler.min) / safe
    return np.where(degenerate, 0.5, out).astype(v.dtype)


def invert_scaler(scaler, v):
    v = _check_dim(scaler, v)
    degenerate = scaler.range == 0
    out = scaler.min + v * scaler.range
    return np.where(degenerate, scaler.min, out).astype(v.dtype)


# ---------------------------------------------------------------------------
# Dataset

@dataclass
class Dataset:
    """Parallel arrays of scaled inputs, [0,1] targets, scaled SDs, and a
    source kind ('word' or 'image') per item."""

    inputs: np.ndarray  # (n, dim)
    targets: np.ndarray  # (n, 3)
    sds: np.ndarray  # (n, 3)
    kinds: list = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.float32)
        self.sds = np.asarray(self.sds, dtype=np.float32)
        n = len(self.inputs)
        if not (len(self.targets) == len(self.sds) == len(self.kinds) == n):
            raise DimensionError(
                f"parallel lists differ in length: {n} inputs, {len(self.targets)} targets, "
                f"{len(self.sds)} sds, {len(self.kinds)} kinds"
            )

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        return Dataset(
            self.inputs[idx],
            self.targets[idx],
            self.sds[idx],
            [self.kinds[i] for i in idx],
        )


def split_dataset(ds, train_fraction, seed):
    """Deterministic seeded split; train size is round(n * fraction)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train_fraction))
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


# ---------------------------------------------------------------------------
# Binary container

@dataclass
class EmbeddingContainer:
    """Keyed float32 tensor: shape (count, dim) or (count, channels, dim)."""

    keys: list
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim not in (2, 3):
            raise DimensionError(f"container data must be 2-d or 3-d, got {self.data.ndim}-d")
        if len(self.keys) != self.data.shape[0]:
            raise DimensionError(
                f"{len(self.keys)} keys for {self.data.shape[0]} rows"
            )
        if len(set(self.keys)) != len(self.keys):
            raise DuplicateKeyError("container keys must be unique")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("container data contains NaN or Inf")

    @property
    def shape(self):
        return self.data.shape

    def row(self, key):
        try:
            return self.data[self.keys.index(key)]
        except ValueError:
            raise KeyError(f"key not found in container: {key!r}") from None


def _write_block(fh, magic, header, payload_bytes):
    raw = json.dumps(header, ensure_ascii=False).encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)
    fh.write(payload_bytes)


def _read_block(fh, magic):
    got = fh.read(4)
    if len(got) < 4:
        raise TruncatedFileError("file shorter than magic")
    if got != magic:
        raise BadMagicError(f"bad magic: expected {magic!r}, got {got!r}")
    raw_len = fh.read(8)
    if len(raw_len) < 8:
        raise TruncatedFileError("file truncated in header length")
    (hlen,) = struct.unpack("<Q", raw_len)
    raw = fh.read(hlen)
    if len(raw) < hlen:
        raise TruncatedFileError("file truncated in header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable header: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"unsupported format version {header.get('version')!r} (expected {FORMAT_VERSION})"
        )
    payload = fh.read()
    return header, payload


def write_container(path, container):
    header = {
        "version": FORMAT_VERSION,
        "dtype": "f32le",
        "shape": list(container.shape),
        "keys": list(container.keys),
    }
    if container.meta:
        header["meta"] = container.meta
    payload = container.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        _write_block(fh, CONTAINER_MAGIC, header, payload)


def read_container(path):
    with open(path, "rb") as fh:
        header, payload = _read_block(fh, CONTAINER_MAGIC)
    if header.get("dtype") != "f32le":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * 4
    if len(payload) < expected:
        raise TruncatedFileError(
            f"payload is {len(payload)} bytes, expected {expected}"
        )
    keys = list(header["keys"])
    if len(set(keys)) != len(keys):
        raise DuplicateKeyError("container keys must be unique")
    data = np.frombuffer(payload[:expected], dtype="<f4").reshape(shape)
    return EmbeddingContainer(keys, data.copy(), header.get("meta", {}))


# ---------------------------------------------------------------------------
# Model files

def _pack_models(models):
    """models: list of (Mlp, embedding Scaler, target Scaler). Returns header
    entries + payload bytes; weights then bias, layer by layer, model by model."""
    entries = []
    chunks = []
    for mlp, emb_scaler, tgt_scaler in models:
        entries.append(
            {
                "layer_dims": mlp.layer_dims,
                "embedding_scaler": {
                    "min": emb_scaler.min.tolist(),
                    "max": emb_scaler.max.tolist(),
                },
                "target_scaler": {
                    "min": tgt_scaler.min.tolist(),
                    "max": tgt_scaler.max.tolist(),
                },
            }
        )
        for layer in mlp.layers:
            chunks.append(layer.weights.astype("<f4", copy=False).tobytes())
            chunks.append(layer.bias.astype("<f4", copy=False).tobytes())
    return entries, b"".join(chunks)


def save_model_file(path, models, kind, training_meta=None):
    """Persist one model or a channel ensemble (kind 'joint' or 'channel')."""
    entries, payload = _pack_models(models)
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "channel_count": len(models),
        "models": entries,
        "training": training_meta or {},
    }
    with open(path, "wb") as fh:
        _write_block(fh, MODEL_MAGIC, header, payload)


def load_model_file(path):
    """Returns (list of (Mlp, embedding Scaler, target Scaler), header)."""
    with open(path, "rb") as fh:
        header, payload = _read_block(fh, MODEL_MAGIC)
    entries = header.get("models", [])
    if header.get("channel_count") != len(entries):
        raise FormatError(
            f"channel_count {header.get('channel_count')} != {len(entries)} model entries"
        )
    models = []
    offset = 0
    for entry in entries:
        dims = entry["layer_dims"]
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            n_w = fan_in * fan_out * 4
            n_b = fan_out * 4
            if offset + n_w + n_b > len(payload):
                raise TruncatedFileError(
                    "weight payload shorter than the header's dimension table requires"
                )
            w = np.frombuffer(payload[offset : offset + n_w], dtype="<f4").reshape(fan_out, fan_in)
            offset += n_w
            b = np.frombuffer(payload[offset : offset + n_b], dtype="<f4")
            offset += n_b
            layers.append(DenseLayer(w.copy(), b.copy()))
        emb = Scaler(
            np.array(entry["embedding_scaler"]["min"], dtype=np.float32),
            np.array(entry["embedding_scaler"]["max"], dtype=np.float32),
        )
        tgt = Scaler(
            np.array(entry["target_scaler"]["min"], dtype=np.float32),
            np.array(entry["target_scaler"]["max"], dtype=np.float32),
        )
        models.append((Mlp(layers), emb, tgt))
    if offset != len(payload):
        raise FormatError(
            f"weight payload has {len(payload) - offset} trailing bytes"
        )
    return models, header
