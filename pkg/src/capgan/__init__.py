"""capgan: desk-scale conditional-GAN caption generation and evaluation."""

__version__ = "0.1.0"
