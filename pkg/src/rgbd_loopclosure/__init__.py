"""Loop-closure ground-truth labeling, desk-scale descriptor head and PR evaluation for RGB-D data."""

__version__ = "0.1.0"
