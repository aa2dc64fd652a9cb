"""Learning from label proportions with tiny models for satellite chips."""

from .estimators import DownconvLLP, QkmLLP, RegressionToMean
from .models import param_count

__all__ = ["DownconvLLP", "QkmLLP", "RegressionToMean", "param_count"]
__version__ = "0.1.0"
