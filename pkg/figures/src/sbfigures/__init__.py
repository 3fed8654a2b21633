"""Figure rendering for shallowbayes CSV/JSON outputs."""

from sbfigures.render import FigureSpec, SchemaError, render

__all__ = ["FigureSpec", "SchemaError", "render"]
