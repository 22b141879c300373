"""Figure rendering for rfmatch benchmark report files."""

from .render import FIGURE_KINDS, FigureSpec, SchemaError, build_figure, render

__version__ = "0.1.0"
