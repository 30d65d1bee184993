"""convimpact: per-utterance quality impact scores from conversation ratings.

The toolkit fits a family of weakly supervised regression models to
conversations that carry only a single overall quality rating, then exposes
the learned per-utterance ratings, weights, and impact scores for ranking,
evaluation, and human-review sampling.
"""

from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
