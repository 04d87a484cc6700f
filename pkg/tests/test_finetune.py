import logging
import math

import numpy as np
import pytest

from lindlearn.assemble import build_system
from lindlearn.curvefit import fit_all
from lindlearn.finetune import (
    FineTuneLayout,
    PatchSpec,
    fine_tune,
    finite_diff_gradient,
    merge_patches,
    misfit,
    pack_theta,
    spam_infidelity,
)
from lindlearn.mitigation import observable_supports, trex_calibrate
from lindlearn.model import LindbladModel, full_template
from lindlearn.pauli import (
    PauliString,
    StructuralError,
    TopologyGraph,
    local_observables,
    schedule_bases,
    schedule_state_sets,
)
from lindlearn.sim import SpamSpec, dataset_from_schedule, series_from_records
from lindlearn.solve import SolveOptions, solve

from conftest import random_model

PREP = 0.03


@pytest.fixture(scope="module")
def rzz():
    """Rzz(0.3) pair with 3% preparation error, learned through biased TREX mitigation."""
    topo = TopologyGraph(2, ((0, 1),))
    truth = LindbladModel(topo, ((PauliString("ZZ"), 0.15),), np.zeros((2, 3, 3)))
    spam = SpamSpec((PREP, PREP), (0.0, 0.0))
    states = schedule_state_sets(topo, 9, 0)
    obs = local_observables(topo)
    ds = dataset_from_schedule(truth, states, schedule_bases(topo), range(11), spam=spam)
    fid = trex_calibrate(spam, observable_supports(obs), shots=None)
    mit = series_from_records(ds.records, states, obs, fid)
    tmpl = full_template(topo)
    learned = solve(build_system(mit, fit_all(mit), tmpl), SolveOptions()).model(tmpl)
    patch = PatchSpec.from_global((0, 1), learned, ds.series)
    truth_patch = PatchSpec.from_global((0, 1), truth, ds.series)
    return {"truth": truth, "learned": learned, "patch": patch, "truth_patch": truth_patch,
            "spam": spam}


@pytest.fixture(scope="module")
def tuned(rzz):
    return fine_tune(rzz["patch"])


def _truth_theta(rzz):
    return pack_theta(rzz["truth_patch"].model, [PREP, PREP], [0.0, 0.0])


def test_spam_infidelity_examples():
    np.testing.assert_allclose(spam_infidelity([0.0], [0.0]), [0.0])
    np.testing.assert_allclose(spam_infidelity([0.01], [0.02]), [0.0298], atol=1e-15)


def test_gradient_quadratic_toy():
    c = np.array([0.3, -1.0, 2.0])
    fun = lambda t: float(np.sum((t - c) ** 2))
    t = np.array([1.0, 0.5, -0.5])
    g = finite_diff_gradient(t, fun, delta=1e-7)
    np.testing.assert_allclose(g, 2 * (t - c), atol=1e-6)


def test_gradient_steps_inward_at_upper_bound():
    fun = lambda t: float(t[0] ** 2)
    g = finite_diff_gradient(np.array([1.0]), fun, delta=1e-7, bounds=[(0.0, 1.0)])
    assert abs(g[0] - 2.0) < 1e-6


def test_learning_bias_reproduced(rzz):
    zz = dict((str(p), a) for p, a in rzz["learned"].terms)["ZZ"]
    assert abs(zz - 0.141) < 5e-4
    assert misfit(pack_theta(rzz["patch"].model, [0, 0], [0, 0]), rzz["patch"]) > 1.0


def test_gradient_matches_central_differences(rzz):
    patch = rzz["patch"]
    theta = pack_theta(patch.model, [0.01, 0.02], [0.01, 0.01])
    layout = FineTuneLayout(len(patch.model.terms), 2)
    g = finite_diff_gradient(theta, patch, bounds=layout.bounds())
    h = 1e-5
    central = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        central[i] = (misfit(theta + e, patch) - misfit(theta - e, patch)) / (2 * h)
    big = np.abs(central) > 1e-3 * np.abs(central).max()
    np.testing.assert_allclose(g[big], central[big], rtol=1e-3)


def test_misfit_zero_at_truth_and_larger_nearby(rzz):
    patch = rzz["truth_patch"]
    theta = _truth_theta(rzz)
    f0 = misfit(theta, patch)
    assert f0 < 1e-24
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = 1e-4 * rng.normal(size=theta.size)
        t = theta + d
        t[-4:] = np.clip(t[-4:], 0.0, 1.0)
        assert misfit(t, patch) > f0


def test_fine_tune_from_truth_stays(rzz):
    patch = rzz["truth_patch"]
    theta = _truth_theta(rzz)
    res = fine_tune(patch, theta0=theta)
    assert np.max(np.abs(res.theta - theta)) <= 1e-10


def test_fine_tune_removes_bias(rzz, tuned):
    assert tuned.misfit_after * 100 <= tuned.misfit_before
    alpha = {str(p): a for p, a in tuned.model.terms}
    assert abs(alpha["ZZ"] - 0.15) < 1e-5
    np.testing.assert_allclose(tuned.prep, PREP, atol=0.005)


def test_fine_tune_iterates_feasible_and_monotone(tuned):
    layout = FineTuneLayout(len(tuned.model.terms), 2)
    spam = tuned.theta[layout.n_alpha + 18:]
    assert np.all((spam >= 0) & (spam <= 1))
    assert all(b <= a for a, b in zip(tuned.history, tuned.history[1:]))


def test_spam_matches_zero_depth_estimate(rzz, tuned):
    shots = 10_000
    fid = trex_calibrate(rzz["spam"], [(0,), (1,)], shots=shots, seed=3)
    for q in range(2):
        f = fid.fidelity((q,))
        zero_depth = (1 - f) / 2
        sigma = math.sqrt((1 - f * f) / shots) / 2
        assert abs(tuned.spam_infidelity()[q] - zero_depth) < 3 * sigma


def test_patch_must_be_connected():
    m = random_model(np.random.default_rng(0), 3)
    with pytest.raises(StructuralError):
        PatchSpec.from_global((0, 2), m, [])


def test_patch_restricts_series():
    m = random_model(np.random.default_rng(1), 3)
    topo = m.topology
    states = schedule_state_sets(topo, 2, 0)
    ds = dataset_from_schedule(m, states, schedule_bases(topo), range(2))
    patch = PatchSpec.from_global((1, 2), m, ds.series)
    assert patch.series and all(len(s.observable) == 2 for s in patch.series)
    assert {str(s.observable) for s in patch.series} >= {"XI", "IZ", "ZZ"}
    assert patch.model.n_qubits == 2


def test_merge_patches_last_writer_and_provenance(caplog):
    m = random_model(np.random.default_rng(2), 3)
    a = PatchSpec.from_global((0, 1), m, []).model
    b = PatchSpec.from_global((1, 2), m, []).model
    a = a.with_values(alpha=[1.0] * len(a.terms))
    b = b.with_values(alpha=[2.0] * len(b.terms))
    with caplog.at_level(logging.WARNING):
        merged, prov = merge_patches(m, [((0, 1), a), ((1, 2), b)])
    coeffs = {str(p): c for p, c in merged.terms}
    assert coeffs["XII"] == 1.0 and coeffs["IXI"] == 2.0 and coeffs["IIX"] == 2.0
    assert prov["XII"] == 0 and prov["IXI"] == 1 and prov["beta:1"] == 1
    assert "refined by patches" in caplog.text
