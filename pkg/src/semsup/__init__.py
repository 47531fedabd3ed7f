"""Classification with sampled class descriptions and hybrid lexical-semantic scoring."""

__version__ = "0.1.0"
