"""Spectrogram-domain steganalysis of compressed-parameter audio steganography.

The package covers the full desk-scale pipeline: WAV ingestion, a simplified
MDCT codec hosting four quantized-coefficient embedders, log-magnitude
spectrograms, fixed/regressed residual filtering, a residual feature network
trained from scratch, and multi-window feature fusion with a linear
maximum-margin classifier.
"""

__version__ = "0.1.0"
