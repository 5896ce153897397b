"""Function-level abstract syntax graphs and a two-stage GNN for Solidity vulnerability detection."""

__version__ = "0.1.0"
