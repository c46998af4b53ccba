"""Multi-modal IPO listing-day outcome prediction: tabular features fused with prospectus text probabilities."""
from __future__ import annotations

__version__ = "0.1.0"
