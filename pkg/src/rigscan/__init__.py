"""Bid-rotation-screen images and a from-scratch CNN for cartel detection."""

__version__ = "0.1.0"
