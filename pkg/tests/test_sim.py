import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindlearn.model import LindbladModel, block_from_rates
from lindlearn.pauli import (
    MeasurementBasis,
    PauliString,
    ProductStateSpec,
    TopologyGraph,
    local_observables,
    schedule_bases,
    schedule_state_sets,
)
from lindlearn.sim import (
    CircuitJob,
    ExactEvolver,
    JobRecord,
    SampledCurve,
    SpamSpec,
    TrotterEvolver,
    dataset_from_schedule,
    evolve_exact,
    evolve_trotter,
    exact_curves,
    load_curves_csv,
    load_series_csv,
    run_job,
    save_curves_csv,
    save_series_csv,
    series_from_records,
    simulate_records,
    suzuki_coefficients,
)

from conftest import dense, evolve_oracle, random_density, random_model


def rz_model(theta, n=1):
    return LindbladModel(TopologyGraph(1), ((PauliString("Z"), theta / 2),), np.zeros((1, 3, 3)))


def cx_model(scale=1.0):
    topo = TopologyGraph.line(2)
    w = scale * np.pi / 4
    terms = ((PauliString("ZI"), w), (PauliString("IX"), w), (PauliString("ZX"), -w),
             (PauliString("ZZ"), 0.01), (PauliString("IZ"), 0.02))
    blocks = np.array([block_from_rates(1e-3, 2e-3), block_from_rates(2e-3, 1e-3)])
    return LindbladModel(topo, terms, blocks)


# ---------------------------------------------------------------- exact evolution


def test_exact_t0_is_identity(rng):
    m = random_model(rng, 2)
    rho = random_density(rng, 2)
    np.testing.assert_allclose(evolve_exact(m, rho, 0.0), rho, atol=1e-14)


def test_rz_on_plus():
    theta = 0.4
    rho = ProductStateSpec("+").density()
    for t in (0.5, 1, 3, 10):
        x = np.trace(dense("X") @ evolve_exact(rz_model(theta), rho, t)).real
        assert math.isclose(x, math.cos(theta * t), abs_tol=1e-13)


def test_amplitude_damping_closed_form():
    gamma = 0.2
    m = LindbladModel(TopologyGraph(1), (), block_from_rates(gamma, 0).reshape(1, 3, 3))
    rho = ProductStateSpec("1").density()
    for t in (1.0, 4.0):
        z = np.trace(dense("Z") @ evolve_exact(m, rho, t)).real
        assert math.isclose(z, 1 - 2 * math.exp(-gamma * t), abs_tol=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_exact_matches_expm_oracle(rng, n):
    m = random_model(rng, n, dissipation=1e-2)
    rho = random_density(rng, n)
    np.testing.assert_allclose(evolve_exact(m, rho, 2.5), evolve_oracle(m, rho, 2.5), atol=1e-12)


def test_expm_fallback_flagged_and_accurate(rng):
    m = random_model(rng, 2)
    ev = ExactEvolver(m, cond_limit=1.0)
    assert ev.fallback
    rho = random_density(rng, 2)
    out = ev.trajectory(rho, [0, 3, 1])
    np.testing.assert_allclose(out[1], evolve_oracle(m, rho, 3.0), atol=1e-12)
    np.testing.assert_allclose(out[2], evolve_oracle(m, rho, 1.0), atol=1e-12)


def test_hermiticity_preserved(rng):
    m = random_model(rng, 3, dissipation=1e-2)
    rho = evolve_exact(m, random_density(rng, 3), 4.0)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-15)


# ---------------------------------------------------------------- Trotter


def test_suzuki_coefficients_sum_to_one():
    for order in (2, 4, 6):
        assert math.isclose(sum(suzuki_coefficients(order)), 1.0, rel_tol=1e-14)
    with pytest.raises(ValueError):
        suzuki_coefficients(3)


def test_trotter_exact_for_commuting_terms(rng):
    topo = TopologyGraph.line(2)
    m = LindbladModel(topo, ((PauliString("ZI"), 0.3), (PauliString("ZZ"), -0.2),
                             (PauliString("IZ"), 0.1)), np.zeros((2, 3, 3)))
    rho = random_density(rng, 2)
    np.testing.assert_allclose(evolve_trotter(m, rho, steps=3, order=2), evolve_exact(m, rho, 1.0),
                               atol=1e-13)


def test_trotter_order6_matches_exact(rng):
    m = cx_model()
    rho = random_density(rng, 2)
    err = np.max(np.abs(evolve_trotter(m, rho, 100, 6) - evolve_exact(m, rho, 1.0)))
    assert err <= 1e-10


def test_trotter_error_decreases_with_steps(rng):
    m = cx_model()
    rho = random_density(rng, 2)
    exact = evolve_exact(m, rho, 1.0)
    errs = [np.max(np.abs(evolve_trotter(m, rho, s, 2) - exact)) for s in (1, 2, 4, 8, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert np.max(np.abs(evolve_trotter(m, rho, 100, 6) - exact)) < errs[0]


@pytest.mark.parametrize("order", [2, 4])
def test_trotter_convergence_order(rng, order):
    m = cx_model(scale=2.0)
    rho = random_density(rng, 2)
    exact = evolve_exact(m, rho, 1.0)
    steps = np.array([2, 4, 8, 16])
    errs = [np.max(np.abs(evolve_trotter(m, rho, int(s), order) - exact)) for s in steps]
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slope <= -order + 0.5


def test_trotter_trajectory_matches_steps(rng):
    m = cx_model()
    ev = TrotterEvolver(m, 10, 4)
    rho = random_density(rng, 2)
    traj = ev.trajectory(rho, [2, 0])
    np.testing.assert_allclose(traj[0], ev.step(ev.step(rho)), atol=1e-15)
    np.testing.assert_array_equal(traj[1], rho)


# ---------------------------------------------------------------- jobs and readout


def test_job_depth0_all_zeros():
    m = random_model(np.random.default_rng(0), 2)
    p = run_job(m, CircuitJob(ProductStateSpec("00"), MeasurementBasis("ZZ"), 0), SpamSpec.noiseless(2))
    np.testing.assert_allclose(p, [1, 0, 0, 0], atol=1e-15)


def test_job_readout_flip():
    p = run_job(rz_model(0.0), CircuitJob(ProductStateSpec("0"), MeasurementBasis("Z"), 0),
                SpamSpec((0.0,), (0.02,)))
    np.testing.assert_allclose(p, [0.98, 0.02], atol=1e-15)


def test_job_prep_error():
    p = run_job(rz_model(0.0), CircuitJob(ProductStateSpec("0"), MeasurementBasis("Z"), 0),
                SpamSpec((0.03,), (0.0,)))
    assert math.isclose(p[0] - p[1], 0.94, abs_tol=1e-15)


def test_job_sampled_counts_sum_to_shots():
    counts = run_job(rz_model(0.3), CircuitJob(ProductStateSpec("+"), MeasurementBasis("X"), 2, 500),
                     SpamSpec((0.0,), (0.05,)), seed=3)
    assert counts.sum() == 500


def test_exact_twirl_average_matches_dense_oracle():
    from functools import reduce

    from lindlearn.sim import _record, job_seed

    rng = np.random.default_rng(4)
    p_ideal = rng.random(4)
    p_ideal /= p_ideal.sum()
    spam = SpamSpec((0.0, 0.0), (0.03, 0.11), (0.05, 0.02))
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    draw = np.random.default_rng(job_seed(9, 1, 2, 3))
    want = np.zeros(4)
    for _ in range(16):
        mask = draw.integers(0, 2, size=2)
        # flip, confuse, unflip: X M X on flipped qubits
        mats = [X @ spam.confusion(q) @ X if b else spam.confusion(q) for q, b in enumerate(mask)]
        want += reduce(np.kron, mats) @ p_ideal
    got = _record(1, 2, MeasurementBasis("ZZ"), 3, p_ideal, spam, None, 16, 9)
    np.testing.assert_allclose(got.probs, want / 16, atol=1e-15)
    ideal = _record(1, 2, MeasurementBasis("ZZ"), 3, p_ideal, SpamSpec.noiseless(2), None, 16, 9)
    np.testing.assert_allclose(ideal.probs, p_ideal, atol=1e-15)


def test_spam_validation():
    with pytest.raises(ValueError):
        SpamSpec((1.5,), (0.0,))
    with pytest.raises(ValueError):
        SpamSpec((0.0, 0.0), (0.0,))


# ---------------------------------------------------------------- datasets


def test_rz_dataset_exact_values():
    theta = 0.3
    ds = dataset_from_schedule(rz_model(theta), [ProductStateSpec("+")], [MeasurementBasis("X")],
                               range(11))
    (s,) = [s for s in ds.series if str(s.observable) == "X"]
    np.testing.assert_allclose(s.values, np.cos(theta * np.arange(11)), atol=1e-13)
    assert np.all(s.variances == 0)


def _two_qubit_schedule(shots=None, seed=0, twirl=1, spam=None, jobs=1):
    m = cx_model()
    topo = m.topology
    states = schedule_state_sets(topo, 3, seed)
    return m, dataset_from_schedule(m, states, schedule_bases(topo), range(4), shots, spam,
                                    twirl, seed, jobs=jobs)


def test_weight1_gets_three_times_the_shots():
    _, ds = _two_qubit_schedule(shots=90)
    by = ds.by_key()
    assert by[0, "XI"].shots[0] == 3 * by[0, "XY"].shots[0]


def test_variance_formula_and_floor():
    rec = JobRecord(0, MeasurementBasis("Z"), 0, np.array([0.5, 0.5]), 100.0)
    (s,) = series_from_records([rec], [ProductStateSpec("0")], [PauliString("Z")])
    assert math.isclose(s.variances[0], 0.01)
    rec = JobRecord(0, MeasurementBasis("Z"), 0, np.array([1.0, 0.0]), 100.0)
    (s,) = series_from_records([rec], [ProductStateSpec("0")], [PauliString("Z")])
    assert math.isclose(s.variances[0], 0.1 / 100)


def test_probabilities_are_normalized():
    m, ds = _two_qubit_schedule(spam=SpamSpec((0.01, 0.02), (0.03, 0.01)))
    for r in ds.records:
        assert abs(r.probs.sum() - 1) <= 1e-12
        assert r.probs.min() >= -1e-14


def test_twirl_does_not_change_exact_values():
    _, plain = _two_qubit_schedule(twirl=1)
    _, twirled = _two_qubit_schedule(twirl=8)
    for a, b in zip(plain.series, twirled.series):
        np.testing.assert_allclose(a.values, b.values, atol=1e-13)


def test_dataset_is_deterministic_and_order_free():
    _, a = _two_qubit_schedule(shots=200, seed=4, twirl=4)
    _, b = _two_qubit_schedule(shots=200, seed=4, twirl=4, jobs=3)
    for x, y in zip(a.series, b.series):
        np.testing.assert_array_equal(x.values, y.values)


def test_shot_noise_scaling():
    m = rz_model(0.5)
    state, basis = [ProductStateSpec("+")], [MeasurementBasis("X")]
    n = 400
    vals = []
    for seed in range(200):
        recs = simulate_records(m, state, basis, [1], shots=n, seed=seed)
        vals.append(series_from_records(recs, state, [PauliString("X")])[0].values[0])
    v = math.cos(0.5)
    assert abs(np.std(vals) / math.sqrt((1 - v * v) / n) - 1) < 0.2


# ---------------------------------------------------------------- exact curves and persistence


def test_exact_curves_match_trajectory(rng):
    m = random_model(rng, 2, dissipation=1e-2)
    ev = ExactEvolver(m)
    states = [ProductStateSpec("+r"), ProductStateSpec("10")]
    obs = local_observables(m.topology)
    curves = exact_curves(ev, states, obs)
    for si, st_ in enumerate(states):
        rhos = ev.trajectory(st_.density(), range(5))
        for o in obs[:5]:
            direct = [np.trace(dense(o) @ r).real for r in rhos]
            np.testing.assert_allclose(curves[si, str(o)].value(np.arange(5)), direct, atol=1e-13)
    # derivative against the Liouvillian directly
    from conftest import lindblad_rhs

    rho = states[0].density()
    c = curves[0, "XI"]
    assert math.isclose(c.derivative(0.0), np.trace(dense("XI") @ lindblad_rhs(m, rho)).real,
                        abs_tol=1e-13)


def test_series_csv_round_trip(tmp_path):
    _, ds = _two_qubit_schedule(shots=123, seed=2, twirl=2)
    p = tmp_path / "s.csv"
    save_series_csv(ds.series, p)
    back = load_series_csv(p)
    assert [s.key for s in back] == [s.key for s in ds.series]
    for a, b in zip(ds.series, back):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.variances, b.variances)
        assert a.state == b.state


def test_curves_csv_round_trip(tmp_path, rng):
    m = random_model(rng, 2)
    curves = exact_curves(ExactEvolver(m), [ProductStateSpec("0+")], local_observables(m.topology))
    p = tmp_path / "c.csv"
    save_curves_csv(curves, range(6), p)
    back = load_curves_csv(p)
    for key, c in curves.items():
        np.testing.assert_array_equal(back[key].value(np.arange(6.0)), c.value(np.arange(6.0)))
        np.testing.assert_array_equal(back[key].derivative(np.arange(6.0)), c.derivative(np.arange(6.0)))
    with pytest.raises(KeyError):
        SampledCurve([0, 1], [0, 0], [0, 0]).value(0.5)
