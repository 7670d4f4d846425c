"""Emotion suppression for face embeddings.

Two blinding methods (adversarial suppression with a triplet utility term,
and encoder retraining with a gradient-reversed emotion head) applied to a
synthetic face-embedding generator, plus the probes, fairness measurement and
experiment pipeline used to evaluate them.
"""

from .errors import ConfigError, DataError, EmoblindError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "EmoblindError", "NumericError", "__version__"]
