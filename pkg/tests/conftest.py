"""Shared fixtures: small graphs and tensors used across the test modules."""
import numpy as np
import pytest

from gcnrwz import graph as graphmod


@pytest.fixture
def line_graph():
    """Three segments in a line: a - b - c."""
    return graphmod.build_graph([("a", "b", 1.0), ("b", "c", 2.0)])


@pytest.fixture
def pair_graph():
    """Two segments joined by one edge."""
    return graphmod.build_graph([("a", "b", 1.0)])


def random_graph(rng, n):
    """Connected random graph on n nodes with varied edge distances."""
    ids = [f"s{i}" for i in range(n)]
    edges = [(ids[i], ids[i + 1], float(rng.uniform(0.5, 3.0)))
             for i in range(n - 1)]
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < 0.3:
                edges.append((ids[i], ids[j], float(rng.uniform(0.5, 3.0))))
    return graphmod.build_graph(edges)
