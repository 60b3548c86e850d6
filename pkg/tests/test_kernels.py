import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ratio_consensus import graph, kernels, simulator as sim
from ratio_consensus.protocol import init_average_consensus

from conftest import small_graphs

needs_compiled = pytest.mark.skipif(kernels.compiled_advance is None, reason="extension not built")


@needs_compiled
def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "compiled"


def test_env_forces_fallback():
    code = "import ratio_consensus.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, RATIO_CONSENSUS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_advance("fortran")


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(
    gi=st.integers(0, len(small_graphs()) - 1),
    q=st.floats(0.05, 1.0),
    seed=st.integers(0, 2**31),
    chunk=st.integers(1, 64),
)
def test_backends_bitwise_equal(gi, q, seed, chunk):
    g = small_graphs()[gi]
    y0 = np.random.default_rng(seed).normal(size=g.n)
    kw = dict(record_in_flight=True)
    a = sim.run(init_average_consensus(y0), g, sim.DropModel(q), seed, 150, backend="compiled", **kw)
    b = sim.run(init_average_consensus(y0), g, sim.DropModel(q), seed, 150, backend="python", chunk=chunk, **kw)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.masks, b.masks)
    np.testing.assert_array_equal(a.flight_y, b.flight_y)
    # mass totals are summed in different orders, so only agree to rounding
    np.testing.assert_allclose(a.mass_y, b.mass_y, rtol=0, atol=1e-12 * max(1, np.abs(y0).sum()))


@needs_compiled
def test_backends_equal_on_replica_batches():
    g = graph.builtin_graph("cycle-chord:4")
    args = (g, sim.DropModel(0.7), np.array([2.0, -1, 4, 3]), np.ones(4), 15, 300, 5)
    a = sim.run_replicas(*args, backend="compiled")
    b = sim.run_replicas(*args, backend="python")
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
