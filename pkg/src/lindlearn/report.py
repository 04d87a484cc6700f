"""Plot-ready tables emitted from a finished run.

Everything is written as CSV or JSON with 17 significant digits so that
external plotting tools can consume it without loss.
"""

from __future__ import annotations

import csv
import json
import logging
import os

import numpy as np

from .model import DENSE_LIMIT, extract_coherence_times
from .sim import ExactEvolver, observable_row
from .solve import model_error

log = logging.getLogger(__name__)


def _f(v):
    return repr(float(v))


def _safe(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def predictions(model, series, dense_limit=DENSE_LIMIT):
    """Model-evolved ``<O(k)>`` for every series, keyed by ``series.key``."""
    if model.n_qubits > dense_limit:
        log.warning("model too large for predictions; skipping")
        return {}
    ev = ExactEvolver(model, dense_limit)
    states = {}
    for s in series:
        states.setdefault(s.state_id, s.state)
    out = {}
    rows = {}
    for si, state in sorted(states.items()):
        depths = sorted({int(k) for s in series if s.state_id == si for k in s.depths})
        vecs = dict(zip(depths, (r.reshape(-1, order="F") for r in ev.trajectory(state.density(), depths))))
        for s in series:
            if s.state_id != si:
                continue
            o = s.observable
            if o not in rows:
                rows[o] = observable_row(o)
            out[s.key] = np.array([np.real(rows[o] @ vecs[int(k)]) for k in s.depths])
    return out


def write_series_tables(series, fits, preds, directory):
    """One CSV per (state, observable): depth, data, fit, fit derivative, prediction."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for s in series:
        si, obs = s.key
        fit = fits.get(s.key) if fits else None
        pred = preds.get(s.key) if preds else None
        k = np.asarray(s.depths, dtype=float)
        fv = fd = None
        if fit is not None:
            fv, fd = fit.value(k), fit.derivative(k)
        path = os.path.join(directory, f"s{si:03d}_{_safe(obs)}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth", "data", "variance", "fit", "fit_derivative", "prediction"])
            for i, d in enumerate(s.depths):
                w.writerow([
                    int(d), _f(s.values[i]), _f(s.variances[i]),
                    "" if fv is None else _f(fv[i]),
                    "" if fd is None else _f(fd[i]),
                    "" if pred is None else _f(pred[i]),
                ])
        written.append(path)
    return written


def write_error_tables(learned, truth, directory, bins=None):
    """Per-coefficient errors and a log10 histogram of them; returns the grouped errors."""
    err = model_error(learned, truth)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "coefficient_errors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "abs_error"])
        for label, e in zip(err.labels, err.abs_errors):
            w.writerow([label, _f(e)])
    if bins is None:
        bins = np.arange(-18.0, 1.0, 0.5)
    logs = np.log10(np.maximum(err.abs_errors, 1e-300))
    counts, edges = np.histogram(np.clip(logs, bins[0], bins[-1]), bins=bins)
    with open(os.path.join(directory, "error_histogram.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["log10_lo", "log10_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([_f(lo), _f(hi), int(c)])
    return err


def write_coherence_table(models, path):
    """T1, T2phi and T2 (microseconds) per qubit for each named model."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "qubit", "T1_us", "T2phi_us", "T2_us", "T1_clipped"])
        for name, model in models.items():
            if model.unit_time_ns is None:
                continue
            ct = extract_coherence_times(model, model.unit_time_ns * 1e-9)
            for q in range(model.n_qubits):
                w.writerow([name, q, _f(ct.T1[q] * 1e6), _f(ct.T2phi[q] * 1e6),
                            _f(ct.T2[q] * 1e6), int(bool(ct.clipped[q]))])


def write_sweep_table(rows, path):
    """Rows of ``(shots, median, H, Hc, D, Dc)`` from a shot sweep."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shots", "median", "H", "Hc", "D", "Dc"])
        for r in rows:
            w.writerow([r["shots"]] + [_f(r[k]) for k in ("median", "H", "Hc", "D", "Dc")])


def write_summary(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


__all__ = [
    "predictions",
    "write_series_tables",
    "write_error_tables",
    "write_coherence_table",
    "write_sweep_table",
    "write_summary",
]
