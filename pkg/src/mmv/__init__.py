"""Multimodal video/audio/text embedding toolkit on a small numpy autodiff core.

Submodules are imported on demand; ``import mmv`` stays cheap.
"""
__version__ = "0.1.0"
