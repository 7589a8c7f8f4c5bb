"""Pool-based active learning with a joint cross-entropy + Barlow Twins
objective and Weibull outlier sampling."""

__version__ = "0.1.0"
