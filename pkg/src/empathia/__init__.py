"""Joint emotion identification and empathetic response generation."""

__version__ = "0.1.0"
