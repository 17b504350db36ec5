"""Extraction jobs: run an encoder over words, images, or prompts and write
the rows into an affectsteer embedding container, with the encoder identity
pinned in the container header.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from affectsteer import dataio

from .encoders import GRID_CHANNELS, GRID_DIM, IMAGE_SIZE, JOINT_DIM, _dedup

MODES = ("text-joint", "image-joint", "prompt-grid")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


@dataclass
class ExtractionJob:
    mode: str
    inputs: object  # word list, image directory path, or prompt list
    output_path: str
    batch_size: int = 32

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "image-joint":
            if not isinstance(self.inputs, (str, os.PathLike)):
                raise ValueError("image-joint mode needs an image directory path")
        elif not self.inputs or not all(isinstance(w, str) for w in self.inputs):
            raise ValueError(f"{self.mode} mode needs a non-empty list of strings")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _meta(encoder, mode, **extra):
    return {
        "mode": mode,
        "checkpoint_id": encoder.checkpoint_id,
        "checkpoint_hash": encoder.checkpoint_hash,
        **extra,
    }


def extract_text(encoder, words, batch_size=32):
    """One 512-dim row per unique word, keyed by the word."""
    if not words:
        raise ValueError("word list is empty")
    words = _dedup(list(words))
    data = encoder.encode_text(words, batch_size=batch_size)
    if data.shape != (len(words), JOINT_DIM):
        raise ValueError(f"encoder produced shape {data.shape}, expected (n, {JOINT_DIM})")
    return dataio.EmbeddingContainer(
        words, data.astype(np.float32), meta=_meta(encoder, "text-joint")
    )


def load_image(path):
    """Decode and square-resize an image to the documented preprocessing."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE)))


def extract_images(encoder, directory, batch_size=32):
    """One 512-dim row per decodable image, keyed by filename.

    Returns (container, skipped) where skipped lists (filename, reason) for
    files that could not be decoded.
    """
    names = sorted(
        f for f in os.listdir(directory) if f.lower().endswith(IMAGE_EXTENSIONS)
    )
    if not names:
        raise ValueError(f"no image files in {directory}")
    arrays, keys, skipped = [], [], []
    for name in names:
        try:
            arrays.append(load_image(os.path.join(directory, name)))
            keys.append(name)
        except (UnidentifiedImageError, OSError) as e:
            skipped.append((name, str(e)))
    if not keys:
        raise ValueError(f"no decodable images in {directory}")
    data = encoder.encode_image_arrays(arrays, batch_size=batch_size)
    meta = _meta(
        encoder,
        "image-joint",
        preprocessing=f"RGB, square resize to {IMAGE_SIZE}x{IMAGE_SIZE}",
    )
    return dataio.EmbeddingContainer(keys, data.astype(np.float32), meta=meta), skipped


def extract_prompt_grids(encoder, prompts, batch_size=32):
    """One 77x768 hidden-state grid per prompt (padding positions included)."""
    if not prompts:
        raise ValueError("prompt list is empty")
    prompts = _dedup(list(prompts))
    data = encoder.encode_prompt_grids(prompts, batch_size=batch_size)
    if data.shape != (len(prompts), GRID_CHANNELS, GRID_DIM):
        raise ValueError(
            f"encoder produced shape {data.shape}, expected (n, {GRID_CHANNELS}, {GRID_DIM})"
        )
    return dataio.EmbeddingContainer(
        prompts, data.astype(np.float32), meta=_meta(encoder, "prompt-grid")
    )


def run_job(job, encoder):
    """Execute an ExtractionJob and write its container; returns a summary."""
    skipped = []
    if job.mode == "text-joint":
        container = extract_text(encoder, job.inputs, batch_size=job.batch_size)
    elif job.mode == "image-joint":
        container, skipped = extract_images(encoder, job.inputs, batch_size=job.batch_size)
    else:
        container = extract_prompt_grids(encoder, job.inputs, batch_size=job.batch_size)
    dataio.write_container(job.output_path, container)
    return {
        "mode": job.mode,
        "rows": len(container.keys),
        "shape": list(container.shape),
        "skipped": skipped,
        "checkpoint_id": container.meta["checkpoint_id"],
        "output": str(job.output_path),
    }
