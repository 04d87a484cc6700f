"""Both kernel backends against dense oracles and each other."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindlearn import kernels

from conftest import dense, random_density

BACKENDS = kernels.available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.load_backend(request.param)


def test_python_backend_always_available():
    assert "python" in BACKENDS
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")


def _monomial_dense(perm, ph):
    d = perm.shape[0]
    M = np.zeros((d, d), dtype=complex)
    M[perm, np.arange(d)] = ph
    return M


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(st.just(n),
                                                     st.text("IXYZ", min_size=n, max_size=n))))
@settings(max_examples=100, deadline=None)
def test_pauli_monomial_matches_kron(args):
    from lindlearn.pauli import PauliString

    n, ops = args
    for name in BACKENDS:
        mod = kernels.load_backend(name)
        perm, ph = mod.pauli_monomial(*PauliString(ops).masks(), n)
        np.testing.assert_allclose(_monomial_dense(np.asarray(perm), np.asarray(ph)), dense(ops))


def test_add_monomial_superop(backend, rng):
    from lindlearn.pauli import PauliString

    n = 2
    d = 4
    A, B = PauliString("XY"), PauliString("ZI")
    ma = backend.pauli_monomial(*A.masks(), n)
    mb = backend.pauli_monomial(*B.masks(), n)
    L = np.zeros((d * d, d * d), dtype=complex)
    backend.add_monomial_superop(L, 0.7 + 0.2j, *ma, *mb)
    rho = random_density(rng, n)
    expect = (0.7 + 0.2j) * dense("XY") @ rho @ dense("ZI")
    np.testing.assert_allclose(L @ rho.reshape(-1, order="F"), expect.reshape(-1, order="F"),
                               atol=1e-14)


def test_pauli_rotate(backend, rng):
    from lindlearn.pauli import PauliString

    n = 3
    P = PauliString("XZY")
    perm, ph = backend.pauli_monomial(*P.masks(), n)
    rho = np.ascontiguousarray(random_density(rng, n))
    c, s = np.cos(0.3), np.sin(0.3)
    U = c * np.eye(8) - 1j * s * dense("XZY")
    np.testing.assert_allclose(backend.pauli_rotate(rho, perm, ph, c, s), U @ rho @ U.conj().T,
                               atol=1e-14)


@pytest.mark.parametrize("q", [0, 1, 2])
def test_apply_1q_superop(backend, rng, q):
    n = 3
    rho = np.ascontiguousarray(random_density(rng, n))
    K = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    S = np.ascontiguousarray(np.kron(K.conj(), K))  # rho -> K rho K^dagger, column stacked
    ops = [np.eye(2)] * n
    ops[q] = K
    from functools import reduce

    Kf = reduce(np.kron, ops)
    np.testing.assert_allclose(backend.apply_1q_superop(rho, S, q, n), Kf @ rho @ Kf.conj().T,
                               atol=1e-13)


def test_pauli_expectation(backend, rng):
    from lindlearn.pauli import PauliString

    rho = np.ascontiguousarray(random_density(rng, 2))
    perm, ph = backend.pauli_monomial(*PauliString("YX").masks(), 2)
    assert np.isclose(backend.pauli_expectation(rho, perm, ph), np.trace(dense("YX") @ rho))


def test_z_expectations(backend, rng):
    p = rng.random(8)
    p /= p.sum()
    masks = np.array([0b100, 0b011, 0b111], dtype=np.int64)
    diag = {0b100: dense("ZII"), 0b011: dense("IZZ"), 0b111: dense("ZZZ")}
    expect = [np.real(np.diag(diag[int(m)])) @ p for m in masks]
    np.testing.assert_allclose(backend.z_expectations(p, masks), expect, atol=1e-15)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    c, py = (kernels.load_backend(b) for b in ("cython", "python"))
    rho = np.ascontiguousarray(random_density(rng, 4))
    for x, z in [(0b1010, 0b0110), (0, 0b1111), (0b1111, 0)]:
        pc, hc = c.pauli_monomial(x, z, 4)
        pp, hp = py.pauli_monomial(x, z, 4)
        np.testing.assert_array_equal(np.asarray(pc), pp)
        np.testing.assert_array_equal(np.asarray(hc), hp)
        np.testing.assert_allclose(c.pauli_rotate(rho, pp, hp, 0.6, 0.8),
                                   py.pauli_rotate(rho, pp, hp, 0.6, 0.8), atol=1e-15)


def test_pure_python_switch():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from lindlearn import kernels; print(kernels.BACKEND)"],
        env={"LINDLEARN_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
