"""Video-to-speech (V2A) and audio-to-audio (A2A) models with audio-only decoder pre-training.

Modules: :mod:`v2a.dsp` (features), :mod:`v2a.losses`, :mod:`v2a.blocks`,
:mod:`v2a.models`, :mod:`v2a.training`, :mod:`v2a.metrics`, :mod:`v2a.data`,
:mod:`v2a.config` and :mod:`v2a.cli`.
"""

from .errors import (ChecksumFailure, DivisionGuardError, IncompatibleCheckpoint, InsufficientLength,
                     InvalidArgument, InvalidConfiguration, ParseError, SampleRateMismatch, UnsupportedFormat,
                     V2AError)

__version__ = "0.1.0"
