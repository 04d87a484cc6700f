"""Ground-truth data generation by density-matrix simulation.

Circuits prepare a (noisy) product eigenstate, apply ``depth`` unit-time
evolutions of the model, rotate into a measurement basis with ideal gates,
optionally apply X-twirls, and read out through per-qubit confusion matrices.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg

from . import kernels
from .model import (
    DENSE_LIMIT,
    CapacityError,
    build_liouvillian,
    single_qubit_dissipator_superop,
)
from .pauli import MeasurementBasis, PauliString, ProductStateSpec, local_observables

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 0.1
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.diag([1, -1j])
# unitary taking the basis letter to Z
_TO_Z = {"Z": np.eye(2, dtype=complex), "X": _H, "Y": _H @ _SDG}


def vec(rho):
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v):
    d = int(round(np.sqrt(v.shape[0])))
    return v.reshape(d, d, order="F")


def hermitize(rho):
    return 0.5 * (rho + rho.conj().T)


# ---------------------------------------------------------------- evolution


class ExactEvolver:
    """Evolution by eigendecomposition of the Liouvillian.

    When the eigenvector matrix is ill-conditioned the propagator falls back
    to ``scipy.linalg.expm`` (scaling and squaring) and ``fallback`` is set.
    """

    def __init__(self, model, dense_limit=DENSE_LIMIT, cond_limit=1e8):
        self.model = model
        self.n = model.n_qubits
        self.L = build_liouvillian(model, dense_limit)
        self.fallback = False
        self._unit = None
        lam, V = np.linalg.eig(self.L)
        cond = np.linalg.cond(V) if self.L.shape[0] <= 1024 else _cond_estimate(V)
        if not np.isfinite(cond) or cond > cond_limit:
            log.warning("ill-conditioned Liouvillian eigenvectors (cond %.3g); using expm", cond)
            self.fallback = True
            self.lam = self.V = self._lu = None
        else:
            self.lam, self.V = lam, V
            self._lu = scipy.linalg.lu_factor(V)
        self.cond = cond

    def modal(self, rho0):
        """Coefficients of ``vec(rho0)`` in the eigenvector basis."""
        return scipy.linalg.lu_solve(self._lu, vec(rho0))

    def evolve(self, rho0, t):
        if t == 0:
            return np.array(rho0, dtype=complex)
        if self.fallback:
            v = scipy.linalg.expm(t * self.L) @ vec(rho0)
        else:
            v = self.V @ (np.exp(t * self.lam) * self.modal(rho0))
        return hermitize(unvec(v))

    def trajectory(self, rho0, depths):
        """Density matrices at the integer ``depths`` (any order)."""
        depths = list(depths)
        if self.fallback:
            if self._unit is None:
                self._unit = scipy.linalg.expm(self.L)
            out = {}
            v = vec(np.asarray(rho0, dtype=complex))
            for k in range(max(depths) + 1):
                if k in depths:
                    out[k] = hermitize(unvec(v))
                v = self._unit @ v
            return [out[k] for k in depths]
        c = self.modal(rho0)
        return [
            np.array(rho0, dtype=complex) if k == 0
            else hermitize(unvec(self.V @ (np.exp(k * self.lam) * c)))
            for k in depths
        ]


def _cond_estimate(V):
    s = scipy.linalg.svdvals(V)
    return s[0] / s[-1] if s[-1] > 0 else np.inf


def evolve_exact(model, rho0, t, dense_limit=DENSE_LIMIT):
    """``exp(t L) rho0``, re-Hermitized."""
    return ExactEvolver(model, dense_limit).evolve(rho0, t)


def suzuki_coefficients(order):
    """Step fractions of the symmetric second-order blocks in a Suzuki formula."""
    if order == 2:
        return [1.0]
    if order % 2 or order < 2:
        raise ValueError("order must be an even integer >= 2")
    k = order // 2
    p = 1.0 / (4.0 - 4.0 ** (1.0 / (2 * k - 1)))
    inner = suzuki_coefficients(order - 2)
    outer = [p * c for c in inner]
    middle = [(1.0 - 4.0 * p) * c for c in inner]
    return outer * 2 + middle + outer * 2


class TrotterEvolver:
    """Suzuki product formula over Hamiltonian Pauli terms and per-qubit dissipators."""

    def __init__(self, model, steps=100, order=6, dense_limit=DENSE_LIMIT):
        if order not in (2, 4, 6):
            raise ValueError("order must be 2, 4 or 6")
        if steps < 1:
            raise ValueError("steps must be >= 1")
        n = model.n_qubits
        if n > dense_limit:
            raise CapacityError(f"{n} qubits exceeds the dense limit of {dense_limit}")
        self.model = model
        self.n = n
        self.steps = steps
        self.order = order
        self._parts = []
        for p, a in model.terms:
            if a != 0.0:
                self._parts.append(("h", a, kernels.pauli_monomial(*p.masks(), n)))
        for q in range(n):
            if np.any(model.dissipator[q]):
                self._parts.append(("d", q, single_qubit_dissipator_superop(model.dissipator[q])))
        self._cache = {}
        self._fractions = suzuki_coefficients(order)

    def _apply(self, rho, part, h):
        kind, a, data = part
        if kind == "h":
            return kernels.pauli_rotate(rho, *data, np.cos(a * h), np.sin(a * h))
        key = (a, h)
        E = self._cache.get(key)
        if E is None:
            E = np.ascontiguousarray(scipy.linalg.expm(h * data))
            self._cache[key] = E
        return kernels.apply_1q_superop(rho, E, a, self.n)

    def _s2(self, rho, h):
        for part in self._parts:
            rho = self._apply(rho, part, h / 2)
        for part in reversed(self._parts):
            rho = self._apply(rho, part, h / 2)
        return rho

    def step(self, rho, t=1.0):
        """Evolve ``rho`` by time ``t`` using ``steps`` product-formula steps."""
        h = t / self.steps
        rho = np.ascontiguousarray(rho, dtype=complex)
        for _ in range(self.steps):
            for f in self._fractions:
                rho = self._s2(rho, f * h)
        return hermitize(rho)

    def evolve(self, rho0, t):
        return self.step(rho0, t)

    def trajectory(self, rho0, depths):
        depths = list(depths)
        out = {}
        rho = np.array(rho0, dtype=complex)
        for k in range(max(depths) + 1):
            if k in depths:
                out[k] = rho
            rho = self.step(rho, 1.0)
        return [out[k] for k in depths]


def evolve_trotter(model, rho0, steps=100, order=6, t=1.0):
    return TrotterEvolver(model, steps, order).step(rho0, t)


def make_evolver(model, method="exact", steps=100, order=6, dense_limit=DENSE_LIMIT):
    if method == "exact":
        return ExactEvolver(model, dense_limit)
    if method == "trotter":
        return TrotterEvolver(model, steps, order, dense_limit)
    raise ValueError(f"unknown evolution method {method!r}")


# ---------------------------------------------------------------- SPAM and readout


@dataclass(frozen=True)
class SpamSpec:
    """Per-qubit state-preparation flips and readout flips.

    ``meas`` is the probability of reading 1 for a prepared 0; ``meas_rev`` the
    probability of reading 0 for a prepared 1 (defaults to ``meas``).
    """

    prep: tuple
    meas: tuple
    meas_rev: tuple | None = None

    def __post_init__(self):
        prep = tuple(float(v) for v in self.prep)
        meas = tuple(float(v) for v in self.meas)
        rev = meas if self.meas_rev is None else tuple(float(v) for v in self.meas_rev)
        for v in prep + meas + rev:
            if not 0.0 <= v <= 1.0:
                raise ValueError("SPAM probabilities must lie in [0, 1]")
        if not len(prep) == len(meas) == len(rev):
            raise ValueError("SPAM vectors must have one entry per qubit")
        object.__setattr__(self, "prep", prep)
        object.__setattr__(self, "meas", meas)
        object.__setattr__(self, "meas_rev", rev)

    @classmethod
    def noiseless(cls, n):
        return cls((0.0,) * n, (0.0,) * n)

    @property
    def n_qubits(self):
        return len(self.prep)

    @property
    def ideal_readout(self):
        return not any(self.meas) and not any(self.meas_rev)

    def confusion(self, q):
        """Column-stochastic 2x2 matrix, ``M[observed, true]``."""
        m0, m1 = self.meas[q], self.meas_rev[q]
        return np.array([[1 - m0, m1], [m0, 1 - m1]])

    def to_dict(self):
        return {"prep": list(self.prep), "meas": list(self.meas), "meas_rev": list(self.meas_rev)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["prep"], d["meas"], d.get("meas_rev"))


def apply_local_maps(p, mats):
    """Apply ``kron(mats[0], mats[1], ...)`` to a probability vector without forming it."""
    n = len(mats)
    t = np.asarray(p, dtype=float).reshape((2,) * n)
    for q, M in enumerate(mats):
        t = np.moveaxis(np.tensordot(M, t, axes=([1], [q])), 0, q)
    return t.reshape(-1)


def flip_bits(p, mask):
    """Permute a distribution by XOR-ing every outcome with ``mask``."""
    if not mask:
        return p
    idx = np.arange(p.shape[0]) ^ mask
    return p[idx]


def twirl_mask_int(mask_bits):
    n = len(mask_bits)
    return sum(1 << (n - 1 - q) for q, b in enumerate(mask_bits) if b)


def basis_unitary(basis):
    return reduce(np.kron, [_TO_Z[c] for c in basis.letters])


def measurement_probabilities(rho, basis):
    U = basis_unitary(basis)
    p = np.real(np.einsum("ij,jk,ik->i", U, rho, U.conj(), optimize=True))
    return p


@dataclass(frozen=True)
class CircuitJob:
    initial: ProductStateSpec
    basis: MeasurementBasis
    depth: int
    shots: int | None = None  # None: infinite
    twirl_mask: tuple | None = None


def readout(p_ideal, spam, twirl_mask=None, shots=None, rng=None):
    """Noisy readout of an ideal outcome distribution.

    Returns the exact observed distribution when ``shots`` is None, else the
    integer counts of ``shots`` sampled bitstrings.  Twirl flips are undone
    classically.
    """
    if spam.ideal_readout:
        p = np.asarray(p_ideal, dtype=float)
    else:
        mats = [spam.confusion(q) for q in range(spam.n_qubits)]
        mask = 0 if twirl_mask is None else twirl_mask_int(twirl_mask)
        p = flip_bits(apply_local_maps(flip_bits(p_ideal, mask), mats), mask)
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    if shots is None:
        return p
    counts = rng.multinomial(int(shots), p)
    return counts


def run_job(model, job, spam, seed=None, evolver=None):
    """Simulate one circuit; exact probabilities for infinite shots, else counts."""
    n = model.n_qubits
    evolver = evolver or ExactEvolver(model)
    rho0 = job.initial.density(spam.prep)
    rho = evolver.evolve(rho0, job.depth) if job.depth else rho0
    p = measurement_probabilities(rho, job.basis)
    rng = None if job.shots is None else np.random.default_rng(seed)
    assert spam.n_qubits == n
    return readout(p, spam, job.twirl_mask, job.shots, rng)


# ---------------------------------------------------------------- datasets


@dataclass
class JobRecord:
    """Aggregated outcome of all twirl instances of one (state, basis, depth)."""

    state_id: int
    basis: MeasurementBasis
    depth: int
    probs: np.ndarray  # observed (or exact) distribution
    shots: float  # np.inf for exact


@dataclass
class TimeSeries:
    state_id: int
    state: ProductStateSpec
    observable: PauliString
    depths: np.ndarray
    values: np.ndarray
    shots: np.ndarray
    variances: np.ndarray
    fidelity: float = 1.0  # readout attenuation divided out, if any

    @property
    def key(self):
        return (self.state_id, str(self.observable))


def job_seed(master, *parts):
    return np.random.SeedSequence([int(master)] + [int(p) for p in parts])


def split_shots(total, parts):
    base, rem = divmod(int(total), parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def simulate_records(model, states, bases, depths, shots=None, spam=None,
                     twirl_instances=1, seed=0, evolver=None, jobs=1):
    """Run every (state, basis, depth) circuit and return ``JobRecord`` objects.

    Each twirl instance draws its random X mask and its shots from a generator
    derived from ``(seed, state, basis, depth, instance)``, so results do not
    depend on execution order.
    """
    n = model.n_qubits
    spam = spam or SpamSpec.noiseless(n)
    evolver = evolver or ExactEvolver(model)
    depths = sorted(set(int(k) for k in depths))

    def one_state(si):
        state = states[si]
        out = []
        rhos = evolver.trajectory(state.density(spam.prep), depths)
        for bi, basis in enumerate(bases):
            for k, rho in zip(depths, rhos):
                p_ideal = measurement_probabilities(rho, basis)
                out.append(_record(si, bi, basis, k, p_ideal, spam, shots, twirl_instances, seed))
        return out

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(one_state, range(len(states))))
    else:
        parts = [one_state(si) for si in range(len(states))]
    return [r for part in parts for r in part]


def _record(si, bi, basis, k, p_ideal, spam, shots, twirl_instances, seed):
    n = spam.n_qubits
    if shots is None:
        if twirl_instances and twirl_instances > 1:
            # full twirl average in the infinite-shot limit
            if spam.ideal_readout:
                return JobRecord(si, basis, k, readout(p_ideal, spam), np.inf)
            rng = np.random.default_rng(job_seed(seed, si, bi, k))
            masks = Counter(tuple(rng.integers(0, 2, size=n)) for _ in range(twirl_instances))
            acc = np.zeros_like(p_ideal)
            for mask, count in masks.items():
                acc += count * readout(p_ideal, spam, mask)
            return JobRecord(si, basis, k, acc / twirl_instances, np.inf)
        return JobRecord(si, basis, k, readout(p_ideal, spam), np.inf)
    counts = np.zeros(p_ideal.shape[0])
    for inst, s in enumerate(split_shots(shots, max(1, twirl_instances))):
        rng = np.random.default_rng(job_seed(seed, si, bi, k, inst))
        mask = tuple(rng.integers(0, 2, size=n)) if twirl_instances > 1 else None
        if s:
            counts += readout(p_ideal, spam, mask, s, rng)
    return JobRecord(si, basis, k, counts / counts.sum(), float(shots))


def series_from_records(records, states, observables, mitigation=None, floor=VARIANCE_FLOOR):
    """Pool records into one ``TimeSeries`` per (state, observable).

    ``mitigation`` may be ``None``, a ``ConfusionEstimate`` (inverts the
    outcome distribution) or ``TrexFidelities`` (divides each value by its
    readout fidelity).  Observables without a usable fidelity are skipped.
    """
    from .mitigation import ConfusionEstimate, TrexFidelities

    if not records:
        return []
    n = len(records[0].basis)
    observables = list(observables)
    zmasks = [_support_mask(o, n) for o in observables]
    acc = {}
    for rec in records:
        meas = [i for i, o in enumerate(observables) if rec.basis.measures(o)]
        if not meas:
            continue
        p = rec.probs
        if isinstance(mitigation, ConfusionEstimate):
            p = mitigation.invert(p)
        vals = kernels.z_expectations(p, np.array([zmasks[i] for i in meas], dtype=np.int64))
        exact = np.isinf(rec.shots)
        w = 1.0 if exact else rec.shots
        for i, v in zip(meas, vals):
            a = acc.setdefault((rec.state_id, i, rec.depth), [0.0, 0.0, exact])
            a[0] += w * v
            a[1] += w
    grouped = {}
    for (si, i, k), (sv, sw, exact) in acc.items():
        grouped.setdefault((si, i), []).append((k, sv / sw, np.inf if exact else sw))
    out = []
    for (si, i), rows in sorted(grouped.items()):
        rows.sort()
        obs = observables[i]
        depths = np.array([r[0] for r in rows])
        values = np.array([r[1] for r in rows])
        shots = np.array([r[2] for r in rows], dtype=float)
        f = 1.0
        raw = values
        if isinstance(mitigation, TrexFidelities):
            f = mitigation.fidelity(obs)
            if f is None:
                continue
            values = values / f
        elif isinstance(mitigation, ConfusionEstimate):
            f = mitigation.attenuation(obs)
            raw = values * f
        with np.errstate(divide="ignore", invalid="ignore"):
            var = np.where(
                np.isinf(shots), 0.0,
                np.maximum((1.0 - np.minimum(raw**2, 1.0)) / shots, floor / shots),
            ) / f**2
        out.append(TimeSeries(si, states[si], obs, depths, values, shots, var, f))
    return out


def _support_mask(pauli, n):
    return sum(1 << (n - 1 - q) for q in pauli.support)


@dataclass
class Dataset:
    records: list
    states: list
    bases: list
    depths: list
    observables: list
    series: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def by_key(self):
        return {s.key: s for s in self.series}


def dataset_from_schedule(model, states, bases, depths, shots=None, spam=None,
                          twirl_instances=1, seed=0, evolver=None, jobs=1,
                          observables=None, mitigation=None):
    """Simulate the schedule and pool unmitigated (or mitigated) time series."""
    observables = observables or local_observables(model.topology)
    records = simulate_records(
        model, states, bases, depths, shots, spam, twirl_instances, seed, evolver, jobs
    )
    series = series_from_records(records, states, observables, mitigation)
    spam = spam or SpamSpec.noiseless(model.n_qubits)
    manifest = {
        "states": [str(s) for s in states],
        "bases": [str(b) for b in bases],
        "depths": sorted(set(int(k) for k in depths)),
        "shots": shots,
        "twirl_instances": twirl_instances,
        "seed": seed,
        "spam": spam.to_dict(),
        "model_hash": model.digest(),
    }
    return Dataset(records, list(states), list(bases), sorted(set(depths)), observables, series, manifest)


# ---------------------------------------------------------------- exact curves


class ExactCurve:
    """``<O(t)> = Re sum_k c_k exp(t lambda_k)`` from the Liouvillian eigensystem."""

    def __init__(self, coeffs, rates):
        self.coeffs = np.asarray(coeffs)
        self.rates = np.asarray(rates)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return np.real(np.exp(np.multiply.outer(t, self.rates)) @ self.coeffs)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return np.real(np.exp(np.multiply.outer(t, self.rates)) @ (self.rates * self.coeffs))


def observable_row(pauli):
    """Row vector ``w`` with ``w @ vec(rho) = Tr(P rho)``."""
    n = len(pauli)
    d = 1 << n
    perm, ph = kernels.pauli_monomial(*pauli.masks(), n)
    # Tr(P rho) = sum_x ph[x] rho[x, perm[x]];  vec index of (x, c) is c*d + x
    w = np.zeros(d * d, dtype=complex)
    w[perm * d + np.arange(d)] = ph
    return w


def exact_curves(evolver, states, observables, spam=None, attenuate=False):
    """Exact ``ExactCurve`` per (state index, observable string).

    With ``attenuate`` the readout attenuation ``prod (1 - m0 - m1)`` of
    symmetric twirled readout is folded into the coefficients.
    """
    if evolver.fallback:
        raise RuntimeError("exact curves need a well-conditioned eigendecomposition")
    n = evolver.n
    spam = spam or SpamSpec.noiseless(n)
    W = np.array([observable_row(o) for o in observables]) @ evolver.V
    out = {}
    for si, state in enumerate(states):
        c = evolver.modal(state.density(spam.prep))
        for o, w in zip(observables, W):
            scale = 1.0
            if attenuate:
                for q in o.support:
                    scale *= 1.0 - spam.meas[q] - spam.meas_rev[q]
            out[si, str(o)] = ExactCurve(scale * w * c, evolver.lam)
    return out


class SampledCurve:
    """Curve known only through its values and derivatives at integer depths."""

    def __init__(self, depths, values, derivatives):
        order = np.argsort(depths)
        self.depths = np.asarray(depths)[order]
        self.values = np.asarray(values, dtype=float)[order]
        self.derivatives = np.asarray(derivatives, dtype=float)[order]

    def _at(self, arr, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.depths, t)
        if np.any(idx >= self.depths.size) or np.any(self.depths[np.minimum(idx, self.depths.size - 1)] != t):
            raise KeyError("curve is only sampled at its stored depths")
        return arr[idx]

    def value(self, t):
        return self._at(self.values, t)

    def derivative(self, t):
        return self._at(self.derivatives, t)


def save_curves_csv(curves, depths, path):
    """Values and derivatives of ``{key: curve}`` at ``depths``."""
    depths = np.asarray(sorted(depths), dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_id", "observable", "depth", "value", "derivative"])
        for (si, obs), c in sorted(curves.items()):
            for k, v, d in zip(depths, c.value(depths), c.derivative(depths)):
                w.writerow([si, obs, int(k), repr(float(v)), repr(float(d))])


def load_curves_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault((int(r["state_id"]), r["observable"]), []).append(
                (int(r["depth"]), float(r["value"]), float(r["derivative"]))
            )
    out = {}
    for key, data in rows.items():
        arr = np.array(sorted(data))
        out[key] = SampledCurve(arr[:, 0], arr[:, 1], arr[:, 2])
    return out


# ---------------------------------------------------------------- persistence


def save_series_csv(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_id", "state", "observable", "depth", "value", "shots", "variance"])
        for s in series:
            for k, v, n, var in zip(s.depths, s.values, s.shots, s.variances):
                w.writerow([s.state_id, str(s.state), str(s.observable), int(k), repr(float(v)),
                            repr(float(n)), repr(float(var))])


def load_series_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (int(r["state_id"]), r["observable"])
            rows.setdefault(key, (r["state"], []))[1].append(
                (int(r["depth"]), float(r["value"]), float(r["shots"]), float(r["variance"]))
            )
    out = []
    for (si, obs), (state, data) in sorted(rows.items()):
        data.sort()
        arr = np.array(data)
        out.append(TimeSeries(si, ProductStateSpec(state), PauliString(obs), arr[:, 0].astype(int),
                              arr[:, 1], arr[:, 2], arr[:, 3]))
    return out


def save_dataset(dataset, csv_path, manifest_path):
    save_series_csv(dataset.series, csv_path)
    with open(manifest_path, "w") as fh:
        json.dump(dataset.manifest, fh, indent=1, sort_keys=True)
