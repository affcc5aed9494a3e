"""Point-cloud surrogate for bottle top-load response: a physics-attention
encoder predicts nodal displacements and a branch/trunk operator head
predicts the reaction-force history."""

__version__ = "0.1.0"
