"""Next-frame prediction by conditional denoising and iterative partial denoising."""

__version__ = "0.1.0"
