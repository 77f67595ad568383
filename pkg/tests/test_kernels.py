import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from momentplan import kernels

needs_numba = pytest.mark.skipif("numba" not in kernels.IMPLEMENTATIONS, reason="numba not installed")


def random_terms(gen, K=40, A=5, maxp=3):
    coef = gen.normal(size=K)
    P = gen.integers(0, maxp + 1, size=(K, A)).astype(np.int64)
    C = gen.integers(0, 3, size=(K, A)).astype(np.int64)
    S = gen.integers(0, 3, size=(K, A)).astype(np.int64)
    return coef, P, C, S


def direct(coef, P, C, S, x):
    return coef * np.prod(x ** P * np.cos(x) ** C * np.sin(x) ** S, axis=1)


def test_numpy_term_values_against_direct():
    gen = np.random.default_rng(0)
    coef, P, C, S = random_terms(gen)
    x = gen.normal(size=5)
    vals, grads = kernels.IMPLEMENTATIONS["numpy"]["term_values_and_grads"](coef, P, C, S, x)
    assert np.allclose(vals, direct(coef, P, C, S, x), rtol=1e-12, atol=1e-14)
    h = 1e-6
    for a in range(5):
        e = np.zeros(5)
        e[a] = h
        fd = (direct(coef, P, C, S, x + e) - direct(coef, P, C, S, x - e)) / (2 * h)
        assert np.allclose(grads[:, a], fd, rtol=1e-6, atol=1e-8)


@needs_numba
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_backends_agree(seed):
    gen = np.random.default_rng(seed)
    coef, P, C, S = random_terms(gen)
    x = gen.normal(size=5)
    X = gen.normal(size=(50, 5))
    nb, npi = kernels.IMPLEMENTATIONS["numba"], kernels.IMPLEMENTATIONS["numpy"]
    v1, g1 = nb["term_values_and_grads"](coef, P, C, S, x)
    v2, g2 = npi["term_values_and_grads"](coef, P, C, S, x)
    assert np.allclose(v1, v2, rtol=1e-12, atol=1e-13) and np.allclose(g1, g2, rtol=1e-11, atol=1e-12)
    assert np.allclose(nb["eval_batch"](coef, P, C, S, X), npi["eval_batch"](coef, P, C, S, X), rtol=1e-11, atol=1e-12)
    B = gen.normal(size=(200, 4))
    E = gen.integers(0, 4, size=(15, 4)).astype(np.int64)
    s1, q1 = nb["moment_sums"](B, E)
    s2, q2 = npi["moment_sums"](B, E)
    assert np.allclose(s1, s2, rtol=1e-12, atol=1e-12) and np.allclose(q1, q2, rtol=1e-12, atol=1e-12)


def test_moment_sums_direct():
    gen = np.random.default_rng(3)
    B = gen.normal(size=(100, 3))
    E = np.array([[1, 0, 0], [2, 1, 0], [0, 0, 3]], dtype=np.int64)
    s, q = kernels.moment_sums(B, E)
    ref = np.stack([np.prod(B ** e, axis=1) for e in E], axis=1)
    assert np.allclose(s, ref.sum(0)) and np.allclose(q, (ref ** 2).sum(0))


def test_env_flag_selects_numpy():
    env = dict(os.environ, MOMENTPLAN_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", "from momentplan import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
