# ruff: noqa: F401
from .report_progress import report_progress
