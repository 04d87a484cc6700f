"""Lindblad models, parameter vectors and the Liouvillian superoperator.

Coefficients are per unit evolution time (hbar = 1).  The dissipator is
block diagonal with one Hermitian 3x3 block per qubit indexed by (X, Y, Z)::

    L(rho) = -i [H, rho] + sum_q sum_ij beta_q[i, j] (P_i rho P_j - {P_j P_i, rho} / 2)

Superoperators act on column-stacked vectorizations, ``vec(A rho B) =
(B^T kron A) vec(rho)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import kernels
from .pauli import PauliString, TopologyGraph, local_observables, multiply

DENSE_LIMIT = 7
T1_CLIP_S = 1e-3

GENERIC = "generic"
T1T2 = "t1t2"

# order of the nine real parameters of a dissipator block
BETA_KEYS = ("XX", "YY", "ZZ", "reXY", "reXZ", "reYZ", "imXY", "imXZ", "imYZ")
RATE_KEYS = ("down", "phi")
_AXIS = {"X": 0, "Y": 1, "Z": 2}


class CapacityError(RuntimeError):
    """Requested dense object exceeds the configured qubit limit."""


def block_from_params(p):
    """Hermitian 3x3 block from the nine real parameters (``BETA_KEYS`` order)."""
    xx, yy, zz, rxy, rxz, ryz, ixy, ixz, iyz = p
    return np.array(
        [
            [xx, rxy + 1j * ixy, rxz + 1j * ixz],
            [rxy - 1j * ixy, yy, ryz + 1j * iyz],
            [rxz - 1j * ixz, ryz - 1j * iyz, zz],
        ],
        dtype=complex,
    )


def params_from_block(b):
    return np.array(
        [
            b[0, 0].real, b[1, 1].real, b[2, 2].real,
            b[0, 1].real, b[0, 2].real, b[1, 2].real,
            b[0, 1].imag, b[0, 2].imag, b[1, 2].imag,
        ]
    )


def block_from_rates(beta_down, beta_phi):
    """Dissipator block for amplitude damping ``beta_down`` and dephasing ``beta_phi``."""
    q = beta_down / 4.0
    return np.array(
        [[q, -1j * q, 0.0], [1j * q, q, 0.0], [0.0, 0.0, beta_phi / 2.0]], dtype=complex
    )


# generic parameters as a linear function of (beta_down, beta_phi)
RATE_TO_BETA = np.zeros((9, 2))
RATE_TO_BETA[0, 0] = RATE_TO_BETA[1, 0] = 0.25
RATE_TO_BETA[6, 0] = -0.25
RATE_TO_BETA[2, 1] = 0.5


def rates_from_block(b):
    """``(beta_down, beta_phi)`` read off from the Z-relaxation and dephasing rates."""
    return 2.0 * (b[0, 0].real + b[1, 1].real), 2.0 * b[2, 2].real


@dataclass(frozen=True)
class LindbladModel:
    topology: TopologyGraph
    terms: tuple  # ((PauliString, alpha), ...)
    dissipator: np.ndarray = field(repr=False)  # (n, 3, 3) complex
    parameterization: str = GENERIC
    unit_time_ns: float | None = None

    def __post_init__(self):
        n = self.topology.n_qubits
        terms = []
        seen = set()
        for p, a in self.terms:
            p = p if isinstance(p, PauliString) else PauliString(p)
            if len(p) != n:
                raise ValueError(f"term {p} has wrong length for {n} qubits")
            if p.weight == 0:
                raise ValueError("identity is not a valid Hamiltonian term")
            if p in seen:
                raise ValueError(f"duplicate Hamiltonian term {p}")
            seen.add(p)
            terms.append((p, float(a)))
        object.__setattr__(self, "terms", tuple(terms))
        d = np.array(self.dissipator, dtype=complex).reshape(n, 3, 3)
        d = 0.5 * (d + d.conj().transpose(0, 2, 1))
        d.setflags(write=False)
        object.__setattr__(self, "dissipator", d)
        if self.parameterization not in (GENERIC, T1T2):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")

    @property
    def n_qubits(self):
        return self.topology.n_qubits

    @property
    def paulis(self):
        return [p for p, _ in self.terms]

    @property
    def alpha(self):
        return np.array([a for _, a in self.terms])

    def rates(self):
        """Per-qubit ``(beta_down, beta_phi)``, shape ``(n, 2)``."""
        return np.array([rates_from_block(b) for b in self.dissipator])

    def hamiltonian_matrix(self):
        n = self.n_qubits
        d = 1 << n
        H = np.zeros((d, d), dtype=complex)
        for p, a in self.terms:
            perm, ph = kernels.pauli_monomial(*p.masks(), n)
            H[perm, np.arange(d)] += a * ph
        return H

    def with_values(self, alpha=None, dissipator=None, parameterization=None):
        terms = self.terms if alpha is None else tuple(
            (p, a) for (p, _), a in zip(self.terms, alpha)
        )
        return LindbladModel(
            self.topology,
            terms,
            self.dissipator if dissipator is None else dissipator,
            parameterization or self.parameterization,
            self.unit_time_ns,
        )

    def __eq__(self, other):
        if not isinstance(other, LindbladModel):
            return NotImplemented
        return (
            self.topology == other.topology
            and self.terms == other.terms
            and np.array_equal(self.dissipator, other.dissipator)
            and self.parameterization == other.parameterization
            and self.unit_time_ns == other.unit_time_ns
        )

    __hash__ = None

    def digest(self):
        """Content hash of the JSON representation."""
        return hashlib.sha256(json.dumps(model_to_dict(self), sort_keys=True).encode()).hexdigest()


def full_template(topology, parameterization=GENERIC, unit_time_ns=None):
    """Zero model with every one-local and edge-supported two-local Hamiltonian term."""
    terms = tuple((p, 0.0) for p in local_observables(topology))
    return LindbladModel(
        topology, terms, np.zeros((topology.n_qubits, 3, 3)), parameterization, unit_time_ns
    )


def embed(model, template):
    """Express ``model`` in the term ordering of ``template``.

    Terms of ``model`` missing from the template raise ``ValueError``.
    """
    coeffs = dict(model.terms)
    missing = set(coeffs) - set(template.paulis)
    if missing:
        raise ValueError(f"terms not in template: {sorted(map(str, missing))}")
    return template.with_values(
        alpha=[coeffs.get(p, 0.0) for p in template.paulis], dissipator=model.dissipator
    )


# ---------------------------------------------------------------- parameter vectors


@dataclass(frozen=True)
class ParameterVector:
    x: np.ndarray
    columns: tuple  # (("alpha", pauli) | ("beta", q, key) | ("rate", q, key)), ...

    def __len__(self):
        return len(self.x)


def column_map(template):
    cols = [("alpha", str(p)) for p in template.paulis]
    n = template.n_qubits
    if template.parameterization == GENERIC:
        cols += [("beta", q, k) for q in range(n) for k in BETA_KEYS]
    else:
        cols += [("rate", q, k) for q in range(n) for k in RATE_KEYS]
    return tuple(cols)


def vectorize(model):
    if model.parameterization == GENERIC:
        beta = np.concatenate([params_from_block(b) for b in model.dissipator]) if model.n_qubits else []
    else:
        beta = model.rates().ravel()
    x = np.concatenate([model.alpha, beta])
    return ParameterVector(x, column_map(model))


def devectorize(x, template):
    x = np.asarray(getattr(x, "x", x), dtype=float)
    n_alpha = len(template.terms)
    n = template.n_qubits
    per = 9 if template.parameterization == GENERIC else 2
    if x.shape != (n_alpha + per * n,):
        raise ValueError(f"expected {n_alpha + per * n} parameters, got {x.shape}")
    beta = x[n_alpha:].reshape(n, per)
    if template.parameterization == GENERIC:
        blocks = np.array([block_from_params(b) for b in beta]).reshape(n, 3, 3)
    else:
        blocks = np.array([block_from_rates(*b) for b in beta]).reshape(n, 3, 3)
    return template.with_values(alpha=x[:n_alpha], dissipator=blocks)


def generic_from_t1t2_matrix(template):
    """Matrix ``G`` with ``x_generic = G @ x_t1t2`` for the given term ordering."""
    n_alpha = len(template.terms)
    n = template.n_qubits
    G = np.zeros((n_alpha + 9 * n, n_alpha + 2 * n))
    G[:n_alpha, :n_alpha] = np.eye(n_alpha)
    for q in range(n):
        G[n_alpha + 9 * q:n_alpha + 9 * q + 9, n_alpha + 2 * q:n_alpha + 2 * q + 2] = RATE_TO_BETA
    return G


def to_generic(model):
    return LindbladModel(model.topology, model.terms, model.dissipator, GENERIC, model.unit_time_ns)


# ---------------------------------------------------------------- superoperator


def _check_dense(n, limit):
    if n > limit:
        raise CapacityError(f"{n} qubits exceeds the dense limit of {limit}")


def build_liouvillian(model, dense_limit=DENSE_LIMIT):
    """Dense ``4**n x 4**n`` superoperator of the model (column stacking)."""
    n = model.n_qubits
    _check_dense(n, dense_limit)
    d = 1 << n
    L = np.zeros((d * d, d * d), dtype=complex)
    ident = (np.arange(d, dtype=np.int64), np.ones(d, dtype=complex))
    for p, a in model.terms:
        if a == 0.0:
            continue
        mono = kernels.pauli_monomial(*p.masks(), n)
        kernels.add_monomial_superop(L, -1j * a, *mono, *ident)
        kernels.add_monomial_superop(L, 1j * a, *ident, *mono)
    for q in range(n):
        block = model.dissipator[q]
        if not np.any(block):
            continue
        paulis = [PauliString.from_sparse(n, {q: c}) for c in "XYZ"]
        monos = [kernels.pauli_monomial(*p.masks(), n) for p in paulis]
        for i, j in product(range(3), range(3)):
            b = block[i, j]
            if b == 0:
                continue
            kernels.add_monomial_superop(L, b, *monos[i], *monos[j])
            pp = multiply(paulis[j], paulis[i])
            qm = kernels.pauli_monomial(*pp.pauli.masks(), n)
            c = -0.5 * b * pp.phase
            kernels.add_monomial_superop(L, c, *qm, *ident)
            kernels.add_monomial_superop(L, c, *ident, *qm)
    return L


def single_qubit_dissipator_superop(block):
    """4x4 superoperator of one dissipator block acting on a single qubit."""
    from .pauli import SINGLE_QUBIT

    P = [SINGLE_QUBIT[c] for c in "XYZ"]
    I2 = np.eye(2)
    S = np.zeros((4, 4), dtype=complex)
    for i, j in product(range(3), range(3)):
        b = block[i, j]
        if b == 0:
            continue
        K = P[j] @ P[i]
        S += b * (np.kron(P[j].T, P[i]) - 0.5 * (np.kron(I2, K) + np.kron(K.T, I2)))
    return S


# ---------------------------------------------------------------- coherence times


@dataclass(frozen=True)
class CoherenceTimes:
    T1: np.ndarray
    T2phi: np.ndarray
    T2: np.ndarray
    clipped: np.ndarray  # bool per qubit, True when T1 hit the clip value


def extract_coherence_times(model, unit_time_s, clip_s=T1_CLIP_S, tiny=1e-15):
    """Per-qubit T1, T2phi and T2 in seconds from the dissipator blocks.

    T1 is clipped at ``clip_s`` when the fitted decay rate is nonpositive or
    would imply a longer time.
    """
    rates = model.rates()
    down, phi = rates[:, 0], rates[:, 1]
    with np.errstate(divide="ignore"):
        t1 = np.where(down > tiny, unit_time_s / np.maximum(down, tiny), np.inf)
        t2phi = np.where(phi > tiny, unit_time_s / np.maximum(phi, tiny), np.inf)
    clipped = t1 > clip_s
    t1 = np.minimum(t1, clip_s)
    t2 = 1.0 / (1.0 / (2.0 * t1) + 1.0 / t2phi)
    return CoherenceTimes(t1, t2phi, t2, clipped)


# ---------------------------------------------------------------- synthetic devices


@dataclass(frozen=True)
class Gate:
    kind: str  # "cx", "x", "s", "rx", "ry", "rz", "rzz"
    qubits: tuple
    angle: float | None = None


GATE_TIME_NS = 50.0

LAYER_3X3 = (
    Gate("cx", (0, 3)),
    Gate("cx", (1, 2)),
    Gate("cx", (7, 4)),
    Gate("s", (6,)),
    Gate("x", (5,)),
)
LAYER_2X3 = (Gate("cx", (0, 3)), Gate("cx", (1, 2)), Gate("x", (5,)))


@dataclass(frozen=True)
class DeviceSpec:
    topology: TopologyGraph
    gates: tuple = ()
    seed: int = 0
    unit_fraction: float = 0.3
    gate_time_ns: float = GATE_TIME_NS
    t1_us: tuple = (100.0, 200.0)
    t2phi_us: tuple = (50.0, 150.0)
    dz_khz: tuple = (5.0, 20.0)
    dzz_khz: tuple = (50.0, 100.0)
    dissipation: bool = True

    @classmethod
    def grid_2x3(cls, seed=0, **kw):
        return cls(TopologyGraph.grid(2, 3), LAYER_2X3, seed, 0.3, **kw)

    @classmethod
    def grid_3x3(cls, seed=0, **kw):
        return cls(TopologyGraph.grid(3, 3), LAYER_3X3, seed, 0.2, **kw)


def gate_terms(gate, n, gate_time_s):
    """Hamiltonian ``{PauliString: rate in rad/s}`` whose gate-time evolution is ``gate``."""
    def ps(d):
        return PauliString.from_sparse(n, d)

    if gate.kind == "cx":
        c, t = gate.qubits
        theta = np.pi / 2 if gate.angle is None else gate.angle
        w = theta / gate_time_s
        return {ps({c: "Z"}): w / 2, ps({t: "X"}): w / 2, ps({c: "Z", t: "X"}): -w / 2}
    if gate.kind == "rzz":
        a, b = gate.qubits
        return {ps({a: "Z", b: "Z"}): gate.angle / gate_time_s / 2}
    (q,) = gate.qubits
    default = {"x": ("X", np.pi), "s": ("Z", np.pi / 2)}
    if gate.kind in default:
        letter, theta = default[gate.kind]
    elif gate.kind in ("rx", "ry", "rz"):
        letter, theta = gate.kind[1].upper(), gate.angle
    else:
        raise ValueError(f"unknown gate kind {gate.kind!r}")
    return {ps({q: letter}): theta / gate_time_s / 2}


def synthetic_device(spec, parameterization=GENERIC):
    """Sample a ground-truth model with coherent Z/ZZ errors, T1 and T2phi.

    All rates are converted to coefficients per unit evolution time
    ``tau = unit_fraction * gate_time``.
    """
    rng = np.random.default_rng(spec.seed)
    topo = spec.topology
    n = topo.n_qubits
    tg = spec.gate_time_ns * 1e-9
    tau = spec.unit_fraction * tg
    rates = {}

    def add(p, w):
        rates[p] = rates.get(p, 0.0) + w

    for g in spec.gates:
        for p, w in gate_terms(g, n, tg).items():
            add(p, w)
    t1 = rng.uniform(*spec.t1_us, size=n) * 1e-6
    t2phi = rng.uniform(*spec.t2phi_us, size=n) * 1e-6
    dz = 2 * np.pi * rng.uniform(*spec.dz_khz, size=n) * 1e3
    dzz = 2 * np.pi * rng.uniform(*spec.dzz_khz, size=len(topo.edges)) * 1e3
    for q in range(n):
        add(PauliString.from_sparse(n, {q: "Z"}), dz[q] / 2)
    for (a, b), w in zip(topo.edges, dzz):
        add(PauliString.from_sparse(n, {a: "Z", b: "Z"}), w / 2)
    terms = tuple((p, w * tau) for p, w in sorted(rates.items()))
    if spec.dissipation:
        blocks = np.array([block_from_rates(tau / t1[q], tau / t2phi[q]) for q in range(n)])
    else:
        blocks = np.zeros((n, 3, 3))
    return LindbladModel(topo, terms, blocks, parameterization, tau * 1e9)


def restrict_model(model, qubits):
    """Terms and dissipators of ``model`` supported inside ``qubits``, relabelled in order."""
    qubits = list(qubits)
    inside = set(qubits)
    terms = tuple(
        (p.restrict(qubits), a) for p, a in model.terms if set(p.support) <= inside
    )
    return LindbladModel(
        model.topology.subgraph(qubits), terms, model.dissipator[qubits],
        model.parameterization, model.unit_time_ns,
    )


# ---------------------------------------------------------------- persistence


def model_to_dict(model):
    return {
        "topology": {"n_qubits": model.n_qubits, "edges": [list(e) for e in model.topology.edges]},
        "alpha": [{"pauli": str(p), "coeff": a} for p, a in model.terms],
        "beta": [
            [[[float(v.real), float(v.imag)] for v in row] for row in block]
            for block in model.dissipator
        ],
        "parameterization": model.parameterization,
        "unit_time_ns": model.unit_time_ns,
    }


def model_from_dict(doc):
    topo = TopologyGraph(doc["topology"]["n_qubits"], tuple(map(tuple, doc["topology"]["edges"])))
    terms = tuple((PauliString(t["pauli"]), t["coeff"]) for t in doc["alpha"])
    beta = np.array(
        [[[complex(re, im) for re, im in row] for row in block] for block in doc["beta"]]
    ).reshape(topo.n_qubits, 3, 3)
    return LindbladModel(topo, terms, beta, doc.get("parameterization", GENERIC), doc.get("unit_time_ns"))


def save_model(model, path, **extra):
    doc = model_to_dict(model)
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
