"""RUL interval prediction with recurrent features and exact GP regression."""

__version__ = "0.1.0"
