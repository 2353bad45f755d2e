"""Configs, runner, CSV output and the command-line interface."""
from .config import ConfigError, RunConfig
from .runner import build_problem, run
from .traceio import read_csv, write_csv
