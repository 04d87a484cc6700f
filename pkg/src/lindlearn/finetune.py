"""Local-patch refinement of a learned model together with SPAM parameters.

The misfit between simulated and *unmitigated* measured observable values
is minimized with L-BFGS-B.  Gradients come from forward finite differences.
The parameter vector is ``[alpha; beta (9 per qubit); s (per qubit); m (per qubit)]``
where ``s`` is the state-preparation flip probability and ``m`` the
symmetric readout flip probability; only the SPAM entries are bounded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .model import (
    DENSE_LIMIT,
    GENERIC,
    CapacityError,
    block_from_params,
    devectorize,
    params_from_block,
    restrict_model,
    to_generic,
    vectorize,
)
from .pauli import PauliString, StructuralError
from .sim import ExactEvolver, observable_row
from .solve import project_psd_block

log = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-7


@dataclass
class PatchSpec:
    """A connected qubit subset with its induced model and restricted data.

    ``series`` holds unmitigated time series whose observables are
    supported inside the patch, re-expressed on the patch qubits.
    """

    qubits: tuple
    model: object  # LindbladModel on the patch
    series: list = field(default_factory=list)

    @property
    def n_qubits(self):
        return len(self.qubits)

    @property
    def keys(self):
        return [s.key for s in self.series]

    @classmethod
    def from_global(cls, qubits, model, series, dense_limit=DENSE_LIMIT):
        """Restrict ``model`` and ``series`` (global labels) to ``qubits``."""
        qubits = tuple(qubits)
        if len(qubits) > dense_limit:
            raise CapacityError(f"patch of {len(qubits)} qubits exceeds the dense limit")
        sub = model.topology.subgraph(qubits)
        if not sub.is_connected():
            raise StructuralError(f"patch {qubits} is not connected")
        inside = set(qubits)
        out = []
        for s in series:
            if not s.observable.weight or not set(s.observable.support) <= inside:
                continue
            out.append(_restrict_series(s, qubits))
        return cls(qubits, to_generic(restrict_model(model, qubits)), out)


def _restrict_series(s, qubits):
    from .sim import TimeSeries

    return TimeSeries(
        s.state_id, s.state.restrict(qubits), s.observable.restrict(qubits), np.asarray(s.depths),
        np.asarray(s.values, dtype=float), s.shots, s.variances, s.fidelity,
    )


@dataclass(frozen=True)
class FineTuneLayout:
    n_alpha: int
    n_qubits: int

    @property
    def size(self):
        return self.n_alpha + 11 * self.n_qubits

    def split(self, theta):
        a = self.n_alpha
        b = a + 9 * self.n_qubits
        c = b + self.n_qubits
        return theta[:b], theta[b:c], theta[c:]

    def bounds(self):
        return [(None, None)] * (self.n_alpha + 9 * self.n_qubits) + [(0.0, 1.0)] * (
            2 * self.n_qubits
        )


def pack_theta(model, prep, meas):
    """Parameter vector from a generic patch model and per-qubit SPAM values."""
    return np.concatenate([vectorize(to_generic(model)).x, np.asarray(prep, float),
                           np.asarray(meas, float)])


def unpack_theta(theta, patch):
    layout = FineTuneLayout(len(patch.model.terms), patch.n_qubits)
    x, s, m = layout.split(np.asarray(theta, dtype=float))
    return devectorize(x, patch.model), s, m


class _Simulator:
    """Infinite-shot predictions of every patch series for a parameter vector."""

    def __init__(self, patch):
        self.patch = patch
        self.layout = FineTuneLayout(len(patch.model.terms), patch.n_qubits)
        self.series = patch.series
        self.observables = sorted({s.observable for s in self.series})
        self.rows = np.array([observable_row(o) for o in self.observables])
        self.obs_index = {o: i for i, o in enumerate(self.observables)}
        self.states = {}
        for s in self.series:
            self.states.setdefault(s.state_id, s.state)
        self.target = np.concatenate([np.asarray(s.values, float) for s in self.series]) \
            if self.series else np.zeros(0)

    def predict(self, theta):
        model, s, m = unpack_theta(theta, self.patch)
        ev = ExactEvolver(model)
        pred = {}
        if ev.fallback:
            for si, state in self.states.items():
                rho0 = state.density(s)
                depths = sorted({int(k) for t in self.series if t.state_id == si for k in t.depths})
                rhos = dict(zip(depths, ev.trajectory(rho0, depths)))
                vecs = {k: r.reshape(-1, order="F") for k, r in rhos.items()}
                pred[si] = lambda oi, ks, vecs=vecs: np.array(
                    [np.real(self.rows[oi] @ vecs[int(k)]) for k in ks]
                )
        else:
            W = self.rows @ ev.V
            for si, state in self.states.items():
                c = ev.modal(state.density(s))
                Wc = W * c
                pred[si] = lambda oi, ks, Wc=Wc: np.real(
                    np.exp(np.multiply.outer(np.asarray(ks, float), ev.lam)) @ Wc[oi]
                )
        out = []
        for t in self.series:
            o = t.observable
            # twirled symmetric readout attenuates <Z_S> by prod(1 - 2 m_q)
            att = float(np.prod([1.0 - 2.0 * m[q] for q in o.support]))
            out.append(att * pred[t.state_id](self.obs_index[o], t.depths))
        return np.concatenate(out) if out else np.zeros(0)

    def misfit(self, theta):
        r = self.predict(theta) - self.target
        return float(r @ r)


def misfit(theta, patch):
    """Sum of squared residuals of the simulated patch against its unmitigated data."""
    return _Simulator(patch).misfit(theta)


def finite_diff_gradient(theta, patch_or_fun, delta=DEFAULT_DELTA, bounds=None, f0=None):
    """Forward-difference gradient; steps backward where a forward step leaves the bounds."""
    fun = patch_or_fun if callable(patch_or_fun) else _Simulator(patch_or_fun).misfit
    theta = np.asarray(theta, dtype=float)
    if f0 is None:
        f0 = fun(theta)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = delta
        if bounds is not None:
            hi = bounds[i][1]
            if hi is not None and theta[i] + h > hi:
                h = -delta
        t = theta.copy()
        t[i] += h
        g[i] = (fun(t) - f0) / h
    return g


@dataclass
class FineTuneResult:
    model: object
    prep: np.ndarray
    meas: np.ndarray
    theta: np.ndarray
    misfit_before: float
    misfit_after: float
    iterations: int
    status: str
    history: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def spam_infidelity(self):
        return spam_infidelity(self.prep, self.meas)


def fine_tune(patch, theta0=None, prep0=None, meas0=None, delta=DEFAULT_DELTA, maxcor=10,
              maxiter=500, gtol=1e-10, psd_project=True):
    """Minimize the patch misfit with L-BFGS-B from a warm start.

    ``theta0`` defaults to the patch model with zero SPAM (or ``prep0`` /
    ``meas0`` when given).  Returns the best accepted iterate.
    """
    sim = _Simulator(patch)
    layout = sim.layout
    n = patch.n_qubits
    if theta0 is None:
        theta0 = pack_theta(
            patch.model,
            np.zeros(n) if prep0 is None else prep0,
            np.zeros(n) if meas0 is None else meas0,
        )
    theta0 = np.clip(np.asarray(theta0, dtype=float), *_box(layout))
    bounds = layout.bounds()
    cache = {}

    def fun(t):
        key = t.tobytes()
        if key not in cache:
            cache.clear()
            f0 = sim.misfit(t)
            cache[key] = (f0, finite_diff_gradient(t, sim.misfit, delta, bounds, f0))
        return cache[key]

    f_start = sim.misfit(theta0)
    history = [f_start]
    best = [theta0.copy(), f_start]

    def callback(t):
        f = sim.misfit(t)
        if f <= best[1]:
            best[0], best[1] = t.copy(), f
        history.append(best[1])

    res = scipy.optimize.minimize(
        fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
        options={"maxcor": maxcor, "maxiter": maxiter, "gtol": gtol, "ftol": 0.0},
    )
    if res.fun <= best[1]:
        best = [np.asarray(res.x, dtype=float), float(res.fun)]
    theta = best[0]
    status = "converged" if res.success else "stopped"
    flags = {"message": str(res.message)}
    model, s, m = unpack_theta(theta, patch)
    if psd_project:
        blocks = np.array([params_from_block(b) for b in model.dissipator])
        proj = np.array([project_psd_block(p) for p in blocks])
        moved = float(np.max(np.abs(proj - blocks))) if blocks.size else 0.0
        flags["psd_moved"] = moved
        if moved > 1e-6:
            flags["psd_projection_significant"] = True
            log.warning("PSD projection moved fine-tuned dissipator by %.3g", moved)
        model = model.with_values(
            dissipator=np.array([block_from_params(p) for p in proj]).reshape(n, 3, 3)
        )
        theta = pack_theta(model, s, m)
    after = sim.misfit(theta)
    return FineTuneResult(model, s, m, theta, f_start, after, int(res.nit), status, history, flags)


def _box(layout):
    lo = np.full(layout.size, -np.inf)
    hi = np.full(layout.size, np.inf)
    k = layout.n_alpha + 9 * layout.n_qubits
    lo[k:], hi[k:] = 0.0, 1.0
    return lo, hi


def spam_infidelity(prep, meas):
    """Combined per-qubit SPAM infidelity ``1 - (1 - s)(1 - m)``."""
    return 1.0 - (1.0 - np.asarray(prep, float)) * (1.0 - np.asarray(meas, float))


def merge_patches(model, results):
    """Write refined patch models back into ``model`` (generic parameterization).

    ``results`` is a sequence of ``(qubits, patch_model)``.  Terms and
    dissipator blocks touched by more than one patch take the value of the
    last patch (with a warning).  Returns ``(model, provenance)`` where
    provenance maps each overwritten term or block to its patch index.
    """
    model = to_generic(model)
    n = model.n_qubits
    coeffs = dict(model.terms)
    blocks = np.array(model.dissipator)
    provenance = {}
    for idx, (qubits, pm) in enumerate(results):
        qubits = tuple(qubits)
        for p, a in pm.terms:
            gp = PauliString.from_sparse(n, {qubits[q]: p.ops[q] for q in p.support})
            if gp not in coeffs:
                raise StructuralError(f"patch term {gp} is not in the global model")
            key = str(gp)
            if key in provenance and provenance[key] != idx:
                log.warning("term %s refined by patches %d and %d; keeping the last",
                            key, provenance[key], idx)
            coeffs[gp] = a
            provenance[key] = idx
        for q_local, q in enumerate(qubits):
            key = f"beta:{q}"
            if key in provenance and provenance[key] != idx:
                log.warning("qubit %d refined by patches %d and %d; keeping the last",
                            q, provenance[key], idx)
            blocks[q] = pm.dissipator[q_local]
            provenance[key] = idx
    merged = model.with_values(alpha=[coeffs[p] for p in model.paulis], dissipator=blocks,
                               parameterization=GENERIC)
    return merged, provenance


__all__ = [
    "PatchSpec",
    "FineTuneLayout",
    "FineTuneResult",
    "pack_theta",
    "unpack_theta",
    "misfit",
    "finite_diff_gradient",
    "fine_tune",
    "spam_infidelity",
    "merge_patches",
]
