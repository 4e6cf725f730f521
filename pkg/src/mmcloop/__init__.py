"""Inner-loop impedance modelling and log-derivative mode identification for MMC back-to-back links."""

__version__ = "0.1.0"
