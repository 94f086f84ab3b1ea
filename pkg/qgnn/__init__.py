"""Query-aware RGCN inference over knowledge graphs."""

__version__ = "1.0.0"
