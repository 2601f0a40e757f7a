"""Next-period risk-class forecasting for social-economy enterprise filings."""

__version__ = "0.1.0"
