"""Command line front end: scenario files, runners, output artifacts."""

from swarmsim.cli.main import main

__all__ = ["main"]
