"""Channel charting localization fused with laser-scan displacements."""

__version__ = "0.1.0"
