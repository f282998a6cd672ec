"""Intrinsic CAR structure matrix and its identifiability constraints."""

import numpy as np
from scipy import sparse


def icar_structure(graph):
    """``R`` with neighbour counts on the diagonal and -1 for each neighbour pair."""
    W = graph.adjacency_matrix()
    counts = np.asarray(W.sum(axis=1)).ravel()
    return (sparse.diags(counts) - W).tocsr()


def build_icar_precision(graph, tau):
    """ICAR precision ``tau * R``.

    ``R`` is positive semidefinite with one null vector (the component
    indicator) per connected component of the graph.
    """
    return (float(tau) * icar_structure(graph)).tocsr()


def component_constraints(graph):
    """Sum-to-zero constraint rows, one per connected component.

    Rows are normalized component indicators, so ``A @ A.T`` is the identity
    and ``R @ A.T`` vanishes. A single-area component has its effect pinned
    to zero.
    """
    n, labels = graph.components()
    A = np.zeros((n, graph.D))
    for c in range(n):
        members = labels == c
        A[c, members] = 1.0 / np.sqrt(members.sum())
    return A
