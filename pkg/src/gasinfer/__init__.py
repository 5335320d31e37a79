"""gasinfer - full-graph GNN inference on BSP and MapReduce-style backends."""

__version__ = "0.1.0"
