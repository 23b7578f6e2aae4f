"""Command line interface of tokenloom."""
__ALL__ = ['commands']

from .commands import build_parser as build_parser, run as run
