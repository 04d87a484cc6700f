import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindlearn.model import (
    GENERIC,
    T1T2,
    CapacityError,
    DeviceSpec,
    LindbladModel,
    block_from_params,
    block_from_rates,
    build_liouvillian,
    devectorize,
    embed,
    extract_coherence_times,
    full_template,
    load_model,
    model_from_dict,
    model_to_dict,
    params_from_block,
    restrict_model,
    save_model,
    synthetic_device,
    vectorize,
)
from lindlearn.pauli import PauliString, ProductStateSpec, TopologyGraph

from conftest import dense, evolve_oracle, liouvillian_oracle, random_density, random_model


def one_qubit(terms=(), block=None, param=GENERIC):
    blk = np.zeros((1, 3, 3)) if block is None else np.asarray(block).reshape(1, 3, 3)
    return LindbladModel(TopologyGraph(1), tuple((PauliString(p), a) for p, a in terms), blk, param)


# ---------------------------------------------------------------- Liouvillian


def test_rz_liouvillian_spectrum():
    theta = 0.7
    L = build_liouvillian(one_qubit([("Z", theta / 2)]))
    ev = np.sort_complex(np.round(np.linalg.eigvals(L), 12))
    np.testing.assert_allclose(ev, np.sort_complex(np.array([-1j * theta, 0, 0, 1j * theta])),
                               atol=1e-12)


def test_zero_model_zero_matrix():
    m = LindbladModel(TopologyGraph.line(2), (), np.zeros((2, 3, 3)))
    assert not np.any(build_liouvillian(m))


def test_amplitude_damping_relaxes_to_ground():
    # <Z> from |1> under pure relaxation: 1 - 2 exp(-gamma t)
    gamma = 0.3
    m = one_qubit(block=block_from_rates(gamma, 0.0))
    L = build_liouvillian(m)
    rho1 = ProductStateSpec("1").density()
    import scipy.linalg

    for t in (0.0, 0.5, 2.0, 7.0):
        rho = (scipy.linalg.expm(t * L) @ rho1.reshape(-1, order="F")).reshape(2, 2, order="F")
        assert math.isclose(np.trace(dense("Z") @ rho).real, 1 - 2 * math.exp(-gamma * t),
                            abs_tol=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_liouvillian_matches_oracle(rng, n):
    m = random_model(rng, n)
    np.testing.assert_allclose(build_liouvillian(m), liouvillian_oracle(m), atol=1e-14)


@given(st.integers(0, 10_000), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_trace_and_hermiticity_preserved(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, dissipation=1e-2)
    L = build_liouvillian(m)
    d = 1 << n
    ident = np.eye(d).reshape(-1, order="F")
    assert np.linalg.norm(ident @ L) <= 1e-12
    rho = random_density(rng, n)
    drho = (L @ rho.reshape(-1, order="F")).reshape(d, d, order="F")
    np.testing.assert_allclose(drho, drho.conj().T, atol=1e-12)


def test_capacity_error():
    topo = TopologyGraph.line(8)
    m = LindbladModel(topo, (), np.zeros((8, 3, 3)))
    with pytest.raises(CapacityError):
        build_liouvillian(m)


# ---------------------------------------------------------------- parameters


@given(st.integers(0, 10_000), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_vectorize_round_trip(seed, n):
    m = random_model(np.random.default_rng(seed), n)
    pv = vectorize(m)
    assert len(pv) == len(m.terms) + 9 * n
    assert devectorize(pv, m) == m


def test_t1t2_round_trip_and_length():
    topo = TopologyGraph.line(2)
    m = LindbladModel(topo, ((PauliString("ZZ"), 0.1),),
                      np.array([block_from_rates(1e-3, 2e-3), block_from_rates(5e-4, 0)]), T1T2)
    pv = vectorize(m)
    assert len(pv) == 1 + 2 * 2
    np.testing.assert_allclose(pv.x[1:], [1e-3, 2e-3, 5e-4, 0.0])
    back = devectorize(pv, m)
    np.testing.assert_allclose(back.dissipator, m.dissipator, atol=1e-18)


def test_devectorize_length_mismatch():
    m = one_qubit([("Z", 0.1)])
    with pytest.raises(ValueError):
        devectorize(np.zeros(3), m)


def test_block_from_rates_pattern_and_spectrum():
    bd, bp = 4e-4, 6e-4
    b = block_from_rates(bd, bp)
    assert b[0, 0] == b[1, 1] == bd / 4
    assert b[0, 1] == -1j * bd / 4 and b[1, 0] == 1j * bd / 4
    assert b[2, 2] == bp / 2
    np.testing.assert_allclose(np.linalg.eigvalsh(b), sorted([0, bd / 2, bp / 2]), atol=1e-18)


@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_block_params_bijection(v):
    v = np.array(v)
    np.testing.assert_array_equal(params_from_block(block_from_params(v)), v)


def test_t1_rate_from_physical_times():
    tau = 50e-9 * 0.3
    spec = DeviceSpec(TopologyGraph(1), (), 0, t1_us=(100, 100), t2phi_us=(50, 50))
    m = synthetic_device(spec)
    bd, bp = m.rates()[0]
    assert math.isclose(bd, tau / 100e-6, rel_tol=1e-12)
    assert math.isclose(bp, tau / 50e-6, rel_tol=1e-12)


# ---------------------------------------------------------------- coherence times


def test_coherence_clip_when_no_decay():
    m = one_qubit(block=block_from_rates(0.0, 1e-3))
    ct = extract_coherence_times(m, 50e-9)
    assert ct.T1[0] == 1e-3 and ct.clipped[0]


def test_coherence_t1_definition():
    m = one_qubit(block=block_from_rates(5e-4, 0.0))
    ct = extract_coherence_times(m, 50e-9)
    assert math.isclose(ct.T1[0], 100e-6, rel_tol=1e-12)
    assert not ct.clipped[0]


def test_coherence_t2_combination():
    tau = 1e-9
    m = one_qubit(block=block_from_rates(tau / 100e-6, tau / 50e-6))
    ct = extract_coherence_times(m, tau)
    assert math.isclose(ct.T2[0], 40e-6, rel_tol=1e-12)


# ---------------------------------------------------------------- synthetic devices


def test_cx_gate_coefficient():
    from lindlearn.model import Gate, gate_terms

    terms = gate_terms(Gate("cx", (0, 1)), 2, 50e-9)
    omega = 2 * np.pi * 5e6
    assert math.isclose(terms[PauliString("ZI")], omega / 2, rel_tol=1e-12)
    assert math.isclose(terms[PauliString("IX")], omega / 2, rel_tol=1e-12)
    assert math.isclose(terms[PauliString("ZX")], -omega / 2, rel_tol=1e-12)


def test_cx_generator_implements_cnot_up_to_phase():
    import scipy.linalg

    from lindlearn.model import Gate, gate_terms

    tg = 50e-9
    H = sum(w * dense(p) for p, w in gate_terms(Gate("cx", (0, 1)), 2, tg).items())
    U = scipy.linalg.expm(-1j * tg * H)
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    phase = U[0, 0]
    np.testing.assert_allclose(U / phase, cnot, atol=1e-12)


def test_synthetic_device_deterministic_and_in_range():
    a = synthetic_device(DeviceSpec.grid_2x3(3))
    b = synthetic_device(DeviceSpec.grid_2x3(3))
    assert a == b
    assert a != synthetic_device(DeviceSpec.grid_2x3(4))
    spec = DeviceSpec(TopologyGraph(6), (), 9)
    m = synthetic_device(spec)
    tau = spec.unit_fraction * spec.gate_time_ns * 1e-9
    for q in range(6):
        z = dict(m.terms)[PauliString.from_sparse(6, {q: "Z"})]
        dz = 2 * z / tau / (2 * np.pi)  # Hz
        assert 5e3 <= dz <= 20e3
    t1 = tau / m.rates()[:, 0]
    assert np.all((t1 >= 100e-6) & (t1 <= 200e-6))


def test_grid_unit_fractions():
    assert DeviceSpec.grid_2x3().unit_fraction == 0.3
    assert DeviceSpec.grid_3x3().unit_fraction == 0.2


# ---------------------------------------------------------------- persistence and helpers


def test_model_json_round_trip(tmp_path, rng):
    m = random_model(rng, 3)
    p = tmp_path / "m.json"
    save_model(m, p)
    assert load_model(p) == m
    assert model_from_dict(model_to_dict(m)) == m


def test_embed_and_restrict(rng):
    m = random_model(rng, 3)
    tmpl = full_template(m.topology)
    e = embed(m, tmpl)
    assert dict(e.terms) == dict(m.terms)
    r = restrict_model(m, (1, 2))
    assert r.n_qubits == 2
    assert dict(r.terms)[PauliString("ZZ")] == dict(m.terms)[PauliString("IZZ")]
    np.testing.assert_array_equal(r.dissipator, m.dissipator[[1, 2]])


def test_evolution_oracle_consistency(rng):
    import scipy.linalg

    m = random_model(rng, 2)
    rho = random_density(rng, 2)
    v = scipy.linalg.expm(build_liouvillian(m)) @ rho.reshape(-1, order="F")
    np.testing.assert_allclose(v.reshape(4, 4, order="F"), evolve_oracle(m, rho, 1.0), atol=1e-13)
