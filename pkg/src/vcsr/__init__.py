"""Simulated low-bitrate video calling with reference-conditioned super-resolution.

The package is organized around the receive-side synthesis pipeline
(``tensor``, ``unet``, ``keypoints``, ``motion``, ``synthesizer``), a toy
rate-controlled block-DCT codec (``codec``), the dual-stream wire layer
(``streaming``), the bitrate-to-resolution controller (``adaptation``), and
quality/rate metrics (``metrics``).  ``cli`` drives end-to-end experiments.
"""

__version__ = "0.1.0"

RESOLUTIONS = (64, 128, 256, 512, 1024)


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(PipelineError):
    """An array did not have the dimensions an operation requires."""


class FormatError(PipelineError):
    """A file, payload, or wire blob could not be parsed."""


class MissingParameter(PipelineError):
    """A weight store lacks a parameter (or has it with the wrong shape)."""
