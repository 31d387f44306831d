"""Regularized M-estimation of scatter matrices on the SPD manifold."""
