"""Learning-guided ranking of pre-trained forecasting models for an unseen dataset and horizon."""

__version__ = "0.1.0"
