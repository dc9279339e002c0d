"""
chunkvid: chunked semi-autoregressive video diffusion with a semantic
sparse KV cache, and segment-level video drift metrics.
"""

from chunkvid.__version__ import version as __version__

__all__ = ["__version__"]
