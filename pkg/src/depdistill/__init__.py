"""Biaffine dependency parsing with teacher-student distillation on a small numpy autodiff."""
__version__ = "0.1.0"
