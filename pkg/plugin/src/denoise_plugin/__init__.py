"""Reference denoiser plugin for the panoweave wire protocol."""

__version__ = "0.1.0"
