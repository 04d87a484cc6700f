"""Ehrenfest linear system ``A x = b`` linking observable derivatives to model parameters.

For a weight-one observable ``O`` the time derivative of its expectation value
is linear in the Hamiltonian coefficients and the dissipator block entries::

    d<O>/dt = sum_j alpha_j <-i [O, P_j]>
              + sum_q sum_ij beta_q[i, j] <P_j O P_i - (P_j P_i O + O P_j P_i) / 2>

Each row of the system corresponds to one (initial state, observable, depth);
``b`` holds the derivative of the fitted curve and the entries of ``A`` are
the observable values ``<O'>`` that multiply each parameter.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import GENERIC, T1T2, column_map, generic_from_t1t2_matrix, to_generic
from .pauli import PauliString, StructuralError, commutator_as_pauli, dissipator_row_terms

log = logging.getLogger(__name__)

_AXES = "XYZ"
# (i, j, real-part column, imaginary-part column) in BETA_KEYS order
_OFFDIAG = ((0, 1, 3, 6), (0, 2, 4, 7), (1, 2, 5, 8))


def symbolic_row(o, template):
    """Coefficient observables of ``d<O>/dt`` for every generic model parameter.

    Returns a list of ``(column, weight, PauliString)`` meaning that column
    ``column`` of the row receives ``weight * <pauli>``.  The identity string
    stands for the constant 1.  Columns follow ``column_map`` of the generic
    version of ``template``.
    """
    n = template.n_qubits
    if len(o) != n:
        raise StructuralError(f"observable {o} has wrong length for {n} qubits")
    out = []
    for col, p in enumerate(template.paulis):
        q = commutator_as_pauli(o, p)
        if q is None:
            continue
        # -i [O, P] = -2i * phase * Q, real because phase is +-i
        w = (-2j * q.phase).real
        out.append((col, w, q.pauli))
    base = len(template.terms)
    for qubit in o.support:
        ps = [PauliString.from_sparse(n, {qubit: c}) for c in _AXES]
        start = base + 9 * qubit
        for i in range(3):
            for w, pauli in dissipator_row_terms(o, ps[i], ps[i]):
                out.append((start + i, w.real, pauli))
        for i, j, c_re, c_im in _OFFDIAG:
            # beta_ij = r + i s and beta_ji = r - i s contribute 2 Re[(r + i s) <T_ij>]
            for w, pauli in dissipator_row_terms(o, ps[i], ps[j]):
                if w.real:
                    out.append((start + c_re, 2.0 * w.real, pauli))
                if w.imag:
                    out.append((start + c_im, -2.0 * w.imag, pauli))
    return [t for t in out if t[1] != 0.0]


@dataclass(frozen=True)
class AssembleOptions:
    smooth_A: bool = False  # use fitted curve values instead of measured ones in A
    weighting: bool = False  # scale each row by 1 / sigma of its derivative series
    depths: tuple | None = None  # restrict rows to these depths


@dataclass
class EquationSystem:
    A: np.ndarray
    b: np.ndarray
    rows: list  # (state_id, observable, depth)
    columns: tuple
    weights: np.ndarray
    parameterization: str = GENERIC
    dropped: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.A.shape

    def weighted(self):
        """``(W A, W b)`` with the per-row weights applied."""
        return self.A * self.weights[:, None], self.b * self.weights

    def residual(self, x):
        Aw, bw = self.weighted()
        return Aw @ np.asarray(getattr(x, "x", x)) - bw

    def zero_columns(self):
        return [self.columns[i] for i in np.flatnonzero(~np.any(self.A, axis=0))]


def _lookup(series):
    if isinstance(series, dict):
        return series
    return {s.key: s for s in series}


def build_system(series, fits, template, options=AssembleOptions()):
    """Assemble one row per (state, weight-one observable, depth).

    Parameters
    ----------
    series : iterable of TimeSeries or dict
        Measured (mitigated) values keyed by ``(state_id, observable)``.
    fits : dict
        Curves keyed like ``series``; anything with ``value(t)`` and
        ``derivative(t)`` works (``FitReport``, ``ExactCurve``).
    template : LindbladModel
        Fixes the parameter ordering and parameterization.
    options : AssembleOptions

    Rows whose right-hand side or any required ``<O'>`` is unavailable are
    dropped and counted in ``dropped``.
    """
    data = _lookup(series)
    generic = to_generic(template) if template.parameterization == T1T2 else template
    columns = column_map(generic)
    n_cols = len(columns)
    keys = sorted(k for k, s in data.items() if s.observable.weight == 1)
    cache = {}
    blocks_A, blocks_b, rows, weights = [], [], [], []
    dropped = 0
    missing = set()
    for si, obs in keys:
        s = data[si, obs]
        o = s.observable
        if o not in cache:
            cache[o] = symbolic_row(o, generic)
        depths = np.asarray(s.depths)
        if options.depths is not None:
            depths = np.array([k for k in depths if k in set(options.depths)])
        if not depths.size:
            continue
        curve = fits.get((si, obs))
        if curve is None:
            dropped += depths.size
            missing.add((si, obs))
            continue
        ok = np.ones(depths.size, dtype=bool)
        Ablk = np.zeros((depths.size, n_cols))
        for col, w, pauli in cache[o]:
            if pauli.weight == 0:
                Ablk[:, col] += w
                continue
            vals = _values(data, fits, si, pauli, depths, options.smooth_A)
            if vals is None:
                ok[:] = False
                missing.add((si, str(pauli)))
                break
            good = np.isfinite(vals)
            ok &= good
            Ablk[good, col] += w * vals[good]
        dropped += int((~ok).sum())
        if not ok.any():
            continue
        depths = depths[ok]
        blocks_A.append(Ablk[ok])
        blocks_b.append(np.asarray(curve.derivative(depths.astype(float)), dtype=float))
        rows.extend((si, obs, int(k)) for k in depths)
        if options.weighting:
            var = np.interp(depths, s.depths, s.variances)
            weights.append(np.where(var > 0, 1.0 / np.sqrt(np.where(var > 0, var, 1.0)), 1.0))
        else:
            weights.append(np.ones(depths.size))
    if not rows:
        raise StructuralError("equation system is empty")
    if dropped:
        log.warning("dropped %d rows with missing observables", dropped)
    A = np.vstack(blocks_A)
    system = EquationSystem(
        A, np.concatenate(blocks_b), rows, columns, np.concatenate(weights), GENERIC, dropped,
        {"missing": sorted(map(str, missing))},
    )
    if template.parameterization == T1T2:
        system = to_t1t2(system, template)
    return system


def _values(data, fits, si, pauli, depths, smooth):
    key = (si, str(pauli))
    if smooth and key in fits:
        return np.asarray(fits[key].value(depths.astype(float)), dtype=float)
    s = data.get(key)
    if s is None:
        return None
    lookup = dict(zip(np.asarray(s.depths).tolist(), s.values))
    return np.array([lookup.get(int(k), np.nan) for k in depths])


def to_t1t2(system, template):
    """Recombine generic dissipator columns into ``(beta_down, beta_phi)`` columns."""
    if system.parameterization == T1T2:
        return system
    G = generic_from_t1t2_matrix(template)
    return EquationSystem(
        system.A @ G, system.b, system.rows, column_map(template), system.weights, T1T2,
        system.dropped, system.diagnostics,
    )


def column_label(col):
    return ":".join(map(str, col))


def parse_column(label):
    kind, *rest = label.split(":")
    if kind == "alpha":
        return (kind, rest[0])
    return (kind, int(rest[0]), rest[1])


def save_system_csv(system, path):
    """Write ``A``, ``b``, weights and row metadata as plain CSV (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_id", "observable", "depth", "weight", "b"]
                   + [column_label(c) for c in system.columns])
        for (si, obs, k), wt, bi, row in zip(system.rows, system.weights, system.b, system.A):
            w.writerow([si, obs, k, repr(float(wt)), repr(float(bi))]
                       + [repr(float(v)) for v in row])


def load_system_csv(path, parameterization=None):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        columns = tuple(parse_column(c) for c in header[5:])
        rows, weights, b, A = [], [], [], []
        for line in r:
            rows.append((int(line[0]), line[1], int(line[2])))
            weights.append(float(line[3]))
            b.append(float(line[4]))
            A.append([float(v) for v in line[5:]])
    if parameterization is None:
        parameterization = T1T2 if columns and any(c[0] == "rate" for c in columns) else GENERIC
    return EquationSystem(
        np.array(A).reshape(len(rows), len(columns)), np.array(b), rows, columns,
        np.array(weights), parameterization,
    )


__all__ = [
    "AssembleOptions",
    "EquationSystem",
    "symbolic_row",
    "build_system",
    "to_t1t2",
    "save_system_csv",
    "load_system_csv",
]
