"""Shared fixtures: a six-node branching network and small chain scenarios."""
import numpy as np
import pytest

from dlmpc import NetworkModel, build_graph, build_locality_index


@pytest.fixture(scope="session")
def six_node_model():
    """Six scalar subsystems with asymmetric couplings and full actuation.

    Directed dependencies (row depends on column): 1<-2, 2<-1, 3<-2, 4<-3,
    4<-5, 5<-3, 5<-4, 6<-5, plus every self block.
    """
    eye = np.array([[1.0]])
    half = np.array([[0.5]])
    a_blocks = {(i, i): eye for i in range(1, 7)}
    for pair in [(1, 2), (2, 1), (3, 2), (4, 3), (4, 5), (5, 3), (5, 4), (6, 5)]:
        a_blocks[pair] = half
    b_blocks = {(i, i): eye for i in range(1, 7)}
    return NetworkModel(
        state_dims=(1,) * 6,
        input_dims=(1,) * 6,
        a_blocks=a_blocks,
        b_blocks=b_blocks,
    )


@pytest.fixture(scope="session")
def six_node_graph(six_node_model):
    return build_graph(six_node_model)


@pytest.fixture(scope="session")
def six_node_index(six_node_model, six_node_graph):
    return build_locality_index(six_node_graph, six_node_model, d=1, horizon=3)
