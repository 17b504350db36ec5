"""affectsteer: predict valence/arousal/dominance from semantic embeddings
and steer embedding grids toward a target affect."""

__version__ = "0.1.0"

from . import dataio, evalreport, nn, predictor, steering  # noqa: F401
