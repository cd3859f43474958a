"""jitmask: real-time virtual backgrounds via online student-teacher distillation."""

__version__ = "0.1.0"
