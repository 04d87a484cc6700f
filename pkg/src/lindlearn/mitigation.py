"""Readout-error calibration and mitigation.

Two routes are provided: inversion of estimated per-qubit confusion
matrices, and TREX-style division of each Pauli-Z expectation value by a
twirled readout fidelity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .pauli import PauliString, ProductStateSpec
from .sim import SpamSpec, apply_local_maps, readout, split_shots, twirl_mask_int

CALIBRATION_SHOTS = 10_000
FIDELITY_FLOOR = 0.05


class MitigationUnavailable(RuntimeError):
    """Confusion estimate is singular and cannot be inverted."""


@dataclass(frozen=True)
class ConfusionEstimate:
    matrices: np.ndarray  # (n, 2, 2), M[observed, true]
    shots: float
    with_spe: bool = False
    symmetric: bool = False

    @property
    def invertible(self):
        return bool(np.all(np.abs(np.linalg.det(self.matrices)) > 1e-6))

    def invert(self, probs):
        """Apply ``kron_q inv(M_q)``; negative entries are kept."""
        return invert_mitigate(probs, self)

    def attenuation(self, pauli):
        """Scale factor ``prod (1 - m0 - m1)`` on ``<Z_S>`` over the support of ``pauli``."""
        f = 1.0
        for q in pauli.support:
            M = self.matrices[q]
            f *= 1.0 - M[1, 0] - M[0, 1]
        return f

    def to_dict(self):
        return {
            "per_qubit_m": [[float(M[1, 0]), float(M[0, 1])] for M in self.matrices],
            "shots": None if np.isinf(self.shots) else self.shots,
            "with_spe": self.with_spe,
        }


def _zero_one_states(n):
    return ProductStateSpec("0" * n), ProductStateSpec("1" * n)


def calibrate_confusion(spam, shots=CALIBRATION_SHOTS, with_spe=True, seed=0, twirl=False):
    """Estimate per-qubit confusion matrices from all-zeros and all-ones preparations.

    With ``with_spe`` the preparations carry the state-preparation error of
    ``spam`` so the estimate absorbs it.  ``shots=None`` gives the exact
    infinite-shot estimate.
    """
    n = spam.n_qubits
    prep = spam.prep if with_spe else (0.0,) * n
    noisy = SpamSpec(prep, spam.meas, spam.meas_rev)
    rng = np.random.default_rng(seed)
    zero, one = _zero_one_states(n)
    flips = np.zeros((2, n))
    for row, state in enumerate((zero, one)):
        rho = state.density(noisy.prep)
        p = np.real(np.diag(rho))
        if shots is None:
            dist = readout(p, noisy)
        else:
            mask = tuple(rng.integers(0, 2, size=n)) if twirl else None
            dist = readout(p, noisy, mask, shots, rng) / shots
        # marginal probability that qubit q reads opposite to the prepared bit
        for q in range(n):
            bit = 1 << (n - 1 - q)
            idx = np.arange(dist.shape[0])
            p1 = dist[(idx & bit) != 0].sum()
            flips[row, q] = p1 if row == 0 else 1.0 - p1
    mats = np.array([[[1 - flips[0, q], flips[1, q]], [flips[0, q], 1 - flips[1, q]]]
                     for q in range(n)])
    return ConfusionEstimate(mats, np.inf if shots is None else float(shots), with_spe)


def invert_mitigate(probs, estimate):
    if not estimate.invertible:
        raise MitigationUnavailable("confusion estimate is singular")
    inv = [np.linalg.inv(M) for M in estimate.matrices]
    return apply_local_maps(probs, inv)


@dataclass(frozen=True)
class TrexFidelities:
    fidelities: dict  # support tuple -> fidelity
    shots: float
    floor: float = FIDELITY_FLOOR

    def fidelity(self, pauli):
        """Fidelity for the Z-frame support of ``pauli``; ``None`` if missing or below floor."""
        key = tuple(pauli.support) if isinstance(pauli, PauliString) else tuple(pauli)
        f = self.fidelities.get(key)
        if f is None or f < self.floor:
            return None
        return f

    def to_dict(self):
        return {
            "per_observable_fidelity": {",".join(map(str, k)): v for k, v in self.fidelities.items()},
            "shots": None if np.isinf(self.shots) else self.shots,
            "floor": self.floor,
        }


def trex_calibrate(spam, supports, shots=CALIBRATION_SHOTS, twirl_instances=16, seed=0,
                   with_spe=True):
    """Twirled zero-depth calibration on the all-zeros state.

    Returns the twirl-averaged ``<Z_S>`` for every support ``S``.  With
    ``shots=None`` the twirl average is exact (all X masks per qubit).
    """
    n = spam.n_qubits
    prep = spam.prep if with_spe else (0.0,) * n
    noisy = SpamSpec(prep, spam.meas, spam.meas_rev)
    p_ideal = np.real(np.diag(ProductStateSpec("0" * n).density(noisy.prep)))
    if shots is None:
        # exact twirl average == symmetrized per-qubit confusion
        mats = [0.5 * (noisy.confusion(q) + noisy.confusion(q)[::-1, ::-1]) for q in range(n)]
        dist = apply_local_maps(p_ideal, mats)
    else:
        counts = np.zeros_like(p_ideal)
        for inst, s in enumerate(split_shots(shots, twirl_instances)):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), inst]))
            mask = tuple(rng.integers(0, 2, size=n))
            if s:
                counts += readout(p_ideal, noisy, mask, s, rng)
        dist = counts / counts.sum()
    supports = [tuple(s) for s in supports]
    masks = np.array([sum(1 << (n - 1 - q) for q in s) for s in supports], dtype=np.int64)
    vals = kernels.z_expectations(dist, masks)
    return TrexFidelities(dict(zip(supports, map(float, vals))),
                          np.inf if shots is None else float(shots))


def trex_mitigate(value, fidelity, floor=FIDELITY_FLOOR):
    """Divide a measured value by its readout fidelity; ``None`` below the floor."""
    if fidelity is None or fidelity < floor:
        return None
    return value / fidelity


def observable_supports(observables):
    return sorted({tuple(o.support) for o in observables if o.weight})


def save_calibration(obj, path, spam=None):
    doc = obj.to_dict()
    if spam is not None:
        doc["spam"] = spam.to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_trex(path):
    with open(path) as fh:
        doc = json.load(fh)
    fid = {
        tuple(int(q) for q in k.split(",")) if k else (): v
        for k, v in doc["per_observable_fidelity"].items()
    }
    shots = doc["shots"]
    return TrexFidelities(fid, np.inf if shots is None else shots, doc.get("floor", FIDELITY_FLOOR))


__all__ = [
    "ConfusionEstimate",
    "MitigationUnavailable",
    "TrexFidelities",
    "calibrate_confusion",
    "invert_mitigate",
    "trex_calibrate",
    "trex_mitigate",
    "observable_supports",
    "twirl_mask_int",
]
