"""Controllable image stylization engine.

The package synthesises images that combine the content of one photograph
with the style statistics of one or more style images, with optional
spatial guidance masks, colour preservation and coarse-to-fine scale
handling.  The heavy lifting happens in plain numpy; a small HTTP service
and a command line front end wrap the core pipelines.
"""

__version__ = "0.1.0"
