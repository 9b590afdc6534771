"""Contrast-dose-reduction toolkit: simulate, restore, and evaluate low-dose MRI."""

__version__ = "0.1.0"
