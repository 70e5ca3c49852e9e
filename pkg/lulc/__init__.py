"""Land use / land cover classification and urban change toolkit."""

__version__ = "0.1.0"
