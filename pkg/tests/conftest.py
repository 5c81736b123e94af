import dataclasses

import numpy as np
import pytest

import rstensor as rt
from rstensor.assembly import AssemblyConfig, reference_for


@pytest.fixture(scope="session")
def box20():
    return rt.Box3(20.0)


@pytest.fixture(scope="session")
def grid64(box20):
    return rt.Grid3(64, box20)


@pytest.fixture(scope="session")
def ref64_doubled(grid64):
    """Doubled-grid Newton reference, M=19, on the n=64, b=20 grid."""
    cfg = AssemblyConfig(grid=grid64, M=19)
    return reference_for(cfg)


@pytest.fixture(scope="session")
def cluster50(box20):
    return rt.generate_random_cluster(50, box20, min_sep=2.0, seed=3)


@pytest.fixture(scope="session")
def assembled50(grid64, cluster50):
    """Unreduced RS assembly of the 50-particle cluster on the n=64 grid."""
    cfg = AssemblyConfig(grid=grid64, M=19, reduce_long=False)
    return rt.build_rs(cluster50, cfg)


def dense_window_sum(reference, indexed, n_terms):
    """Oracle: dense sum of shifted reference windows (first n_terms terms)."""
    n = reference.grid.n // 2
    u = reference.tensor.factors[0]
    w = reference.tensor.weights[:n_terms]
    out = np.zeros((n, n, n))
    for nu in range(indexed.count):
        j = indexed.indices[nu]
        slices = [u[n - j[ell]:2 * n - j[ell], :n_terms] for ell in range(3)]
        out += indexed.charges[nu] * np.einsum(
            "k,ik,jk,lk->ijl", w, slices[0], slices[1], slices[2], optimize=True
        )
    return out


@pytest.fixture(scope="session")
def dense50(ref64_doubled, assembled50):
    """Dense oracle field of the full (unsplit) 50-particle sum."""
    return dense_window_sum(ref64_doubled, assembled50.system, ref64_doubled.R)


def with_split(reference, split_index):
    return dataclasses.replace(reference, split_index=split_index)
