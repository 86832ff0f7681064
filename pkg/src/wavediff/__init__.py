"""wavediff: synthetic intraday market data via wavelet-imaged diffusion.

Three synchronized minute series per trading day (mid-price log returns,
bid-ask spreads, traded volumes) are normalized, Haar-transformed, and
tiled into 3-channel coefficient images; a denoising diffusion model is
trained on those images, and sampled images invert back into realistic
minute bars. A metrics suite grades how well the synthetic days reproduce
the stylized facts of the source data.
"""

from .errors import ConfigError, DataError, DigestMismatchError, PipelineError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DigestMismatchError",
    "PipelineError",
    "__version__",
]
