"""Travel-time tomography in 3-D by a globally convergent Carleman-weighted method."""
from __future__ import annotations

__version__ = "0.1.0"
