"""Symbolic Pauli algebra, product states and measurement scheduling.

Qubit ``q`` corresponds to character ``q`` of a Pauli string and to the
``q``-th Kronecker factor (most significant bit of a basis index).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from itertools import product

import numpy as np

LETTERS = "IXYZ"
_XBIT = {"I": 0, "X": 1, "Y": 1, "Z": 0}
_ZBIT = {"I": 0, "X": 0, "Y": 1, "Z": 1}

# single-qubit products a*b = i**k * c
_PRODUCT = {}
for _a in LETTERS:
    for _b in LETTERS:
        if _a == "I":
            _PRODUCT[_a, _b] = (0, _b)
        elif _b == "I":
            _PRODUCT[_a, _b] = (0, _a)
        elif _a == _b:
            _PRODUCT[_a, _b] = (0, "I")
_CYCLIC = {("X", "Y"): "Z", ("Y", "Z"): "X", ("Z", "X"): "Y"}
for (_a, _b), _c in _CYCLIC.items():
    _PRODUCT[_a, _b] = (1, _c)
    _PRODUCT[_b, _a] = (3, _c)

SINGLE_QUBIT = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# eigenstate label -> (basis letter, sign)
EIGENSTATES = {
    "0": ("Z", 1),
    "1": ("Z", -1),
    "+": ("X", 1),
    "-": ("X", -1),
    "r": ("Y", 1),
    "l": ("Y", -1),
}
_LABEL_FOR = {v: k for k, v in EIGENSTATES.items()}


class StructuralError(ValueError):
    """Operands of incompatible shape or length."""


class UnsupportedTopologyError(ValueError):
    """The topology graph cannot be two-colored."""


@dataclass(frozen=True, order=True)
class PauliString:
    """Tensor product of single-qubit Paulis, e.g. ``PauliString("XIZ")``."""

    ops: str

    def __post_init__(self):
        if not isinstance(self.ops, str) or any(c not in LETTERS for c in self.ops):
            raise StructuralError(f"invalid Pauli string {self.ops!r}")

    @classmethod
    def identity(cls, n):
        return cls("I" * n)

    @classmethod
    def from_sparse(cls, n, letters):
        """Build from a ``{qubit: letter}`` mapping."""
        ops = ["I"] * n
        for q, c in letters.items():
            ops[q] = c
        return cls("".join(ops))

    def __len__(self):
        return len(self.ops)

    def __str__(self):
        return self.ops

    @property
    def n_qubits(self):
        return len(self.ops)

    @property
    def weight(self):
        return sum(c != "I" for c in self.ops)

    @property
    def support(self):
        return tuple(q for q, c in enumerate(self.ops) if c != "I")

    def masks(self):
        """Return ``(xmask, zmask)`` with qubit 0 in the most significant bit."""
        n = len(self.ops)
        x = z = 0
        for q, c in enumerate(self.ops):
            bit = 1 << (n - 1 - q)
            if _XBIT[c]:
                x |= bit
            if _ZBIT[c]:
                z |= bit
        return x, z

    def matrix(self):
        """Dense ``2**n`` matrix; intended for small oracles and tests."""
        return reduce(np.kron, [SINGLE_QUBIT[c] for c in self.ops])

    def commutes_with(self, other):
        _check_lengths(self, other)
        return anticommuting_count(self, other) % 2 == 0

    def restrict(self, qubits):
        return PauliString("".join(self.ops[q] for q in qubits))


@dataclass(frozen=True)
class PhasedPauli:
    """``i**k`` times a Pauli string, with ``k`` in ``{0, 1, 2, 3}``."""

    k: int
    pauli: PauliString

    def __post_init__(self):
        object.__setattr__(self, "k", int(self.k) % 4)

    @classmethod
    def of(cls, ops, phase=1):
        return cls(_phase_to_k(phase), PauliString(ops))

    @property
    def phase(self):
        return (1, 1j, -1, -1j)[self.k]

    def __mul__(self, other):
        return multiply(self, other)

    def matrix(self):
        return self.phase * self.pauli.matrix()


def _phase_to_k(phase):
    for k, v in enumerate((1, 1j, -1, -1j)):
        if phase == v:
            return k
    raise StructuralError(f"phase must be one of +1, -1, +i, -i, got {phase!r}")


def _check_lengths(a, b):
    if len(a) != len(b):
        raise StructuralError(f"length mismatch: {len(a)} vs {len(b)}")


def anticommuting_count(a, b):
    """Number of qubits on which the letters of ``a`` and ``b`` anticommute."""
    return sum(x != "I" and y != "I" and x != y for x, y in zip(a.ops, b.ops))


@lru_cache(maxsize=1 << 16)
def _mul_strings(a, b):
    k = 0
    out = []
    for x, y in zip(a, b):
        dk, c = _PRODUCT[x, y]
        k += dk
        out.append(c)
    return k % 4, "".join(out)


def multiply(p, q):
    """Exact product of two phased Paulis."""
    if isinstance(p, PauliString):
        p = PhasedPauli(0, p)
    if isinstance(q, PauliString):
        q = PhasedPauli(0, q)
    _check_lengths(p.pauli, q.pauli)
    k, ops = _mul_strings(p.pauli.ops, q.pauli.ops)
    return PhasedPauli(p.k + q.k + k, PauliString(ops))


def commutator_as_pauli(o, p):
    """Return ``Q`` with ``[o, p] = 2 Q``, or ``None`` when ``o`` and ``p`` commute."""
    _check_lengths(o, p)
    if anticommuting_count(o, p) % 2 == 0:
        return None
    return multiply(o, p)


def dissipator_row_terms(o, p_i, p_j):
    """Expand ``(P_j [O, P_i] + [P_j, O] P_i) / 2`` into complex-weighted Paulis.

    Equal to ``P_j O P_i - (P_j P_i O + O P_j P_i) / 2``.  Returns a list of
    ``(weight, PauliString)`` with zero weights removed, sorted by Pauli.
    """
    _check_lengths(o, p_i)
    _check_lengths(o, p_j)
    acc = {}
    terms = (
        (1.0, multiply(multiply(p_j, o), p_i)),
        (-0.5, multiply(multiply(p_j, p_i), o)),
        (-0.5, multiply(o, multiply(p_j, p_i))),
    )
    for w, pp in terms:
        acc[pp.pauli] = acc.get(pp.pauli, 0) + w * pp.phase
    return [(complex(w), q) for q, w in sorted(acc.items()) if abs(w) > 1e-15]


@dataclass(frozen=True)
class ProductStateSpec:
    """Product of single-qubit Pauli eigenstates, e.g. ``ProductStateSpec("r-l")``."""

    labels: str

    def __post_init__(self):
        if any(c not in EIGENSTATES for c in self.labels):
            raise StructuralError(f"invalid state labels {self.labels!r}")

    def __len__(self):
        return len(self.labels)

    def __str__(self):
        return self.labels

    def bloch(self, q):
        """Return ``(letter, sign)`` of qubit ``q``."""
        return EIGENSTATES[self.labels[q]]

    def qubit_density(self, q, prep_error=0.0):
        """2x2 density matrix of qubit ``q``; ``prep_error`` mixes in the orthogonal state."""
        letter, sign = EIGENSTATES[self.labels[q]]
        pol = sign * (1.0 - 2.0 * prep_error)
        return 0.5 * (SINGLE_QUBIT["I"] + pol * SINGLE_QUBIT[letter])

    def density(self, prep_errors=None):
        n = len(self.labels)
        if prep_errors is None:
            prep_errors = np.zeros(n)
        return reduce(np.kron, [self.qubit_density(q, prep_errors[q]) for q in range(n)])

    def restrict(self, qubits):
        return ProductStateSpec("".join(self.labels[q] for q in qubits))


@dataclass(frozen=True)
class MeasurementBasis:
    """Per-qubit measurement basis letters, e.g. ``MeasurementBasis("XZY")``."""

    letters: str

    def __post_init__(self):
        if any(c not in "XYZ" for c in self.letters):
            raise StructuralError(f"invalid basis letters {self.letters!r}")

    def __len__(self):
        return len(self.letters)

    def __str__(self):
        return self.letters

    def measures(self, pauli):
        """True when every non-identity letter of ``pauli`` matches this basis."""
        return all(c == "I" or c == b for c, b in zip(pauli.ops, self.letters))


@dataclass(frozen=True)
class TopologyGraph:
    n_qubits: int
    edges: tuple = ()
    coloring: tuple = field(default=None, compare=False)

    def __post_init__(self):
        edges = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b or not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise StructuralError(f"invalid edge ({a}, {b})")
            edges.append((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(sorted(set(edges))))
        if self.coloring is not None:
            coloring = tuple(int(c) for c in self.coloring)
            if len(coloring) != self.n_qubits or any(
                coloring[a] == coloring[b] for a, b in self.edges
            ):
                raise UnsupportedTopologyError("coloring is not a proper 2-coloring")
            object.__setattr__(self, "coloring", coloring)

    @classmethod
    def grid(cls, rows, cols):
        """Rectangular grid, qubits labelled left to right, top to bottom."""
        edges = []
        for r in range(rows):
            for c in range(cols):
                q = r * cols + c
                if c + 1 < cols:
                    edges.append((q, q + 1))
                if r + 1 < rows:
                    edges.append((q, q + cols))
        return cls(rows * cols, tuple(edges))

    @classmethod
    def line(cls, n):
        return cls(n, tuple((q, q + 1) for q in range(n - 1)))

    def neighbors(self, q):
        return [b if a == q else a for a, b in self.edges if q in (a, b)]

    def two_coloring(self):
        """BFS two-coloring; raises ``UnsupportedTopologyError`` for odd cycles."""
        if self.coloring is not None:
            return self.coloring
        color = [-1] * self.n_qubits
        adj = {q: self.neighbors(q) for q in range(self.n_qubits)}
        for start in range(self.n_qubits):
            if color[start] >= 0:
                continue
            color[start] = 0
            queue = deque([start])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if color[v] < 0:
                        color[v] = 1 - color[u]
                        queue.append(v)
                    elif color[v] == color[u]:
                        raise UnsupportedTopologyError(
                            f"topology is not bipartite (edge {u}-{v})"
                        )
        return tuple(color)

    def subgraph(self, qubits):
        """Induced subgraph on ``qubits``, relabelled ``0..len(qubits)-1``."""
        index = {q: i for i, q in enumerate(qubits)}
        edges = tuple(
            (index[a], index[b]) for a, b in self.edges if a in index and b in index
        )
        return TopologyGraph(len(qubits), edges)

    def is_connected(self):
        if self.n_qubits == 0:
            return True
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n_qubits


_ROUNDS = list(product(range(3), range(3)))


def schedule_bases(topology):
    """Nine measurement bases covering every ordered letter pair on every edge."""
    color = topology.two_coloring()
    bases = []
    for a, b in _ROUNDS:
        letters = "".join("XYZ"[a if color[q] == 0 else b] for q in range(topology.n_qubits))
        bases.append(MeasurementBasis(letters))
    return bases


def schedule_states(topology, rng_seed):
    """Nine product eigenstates with the basis coverage of ``schedule_bases``.

    The sign of each single-qubit eigenstate is drawn uniformly from a
    generator seeded with ``rng_seed``.
    """
    rng = np.random.default_rng(rng_seed)
    states = []
    for basis in schedule_bases(topology):
        signs = rng.integers(0, 2, size=topology.n_qubits)
        labels = "".join(
            _LABEL_FOR[letter, 1 if s == 0 else -1] for letter, s in zip(basis.letters, signs)
        )
        states.append(ProductStateSpec(labels))
    return states


def schedule_state_sets(topology, n_states, rng_seed):
    """First ``n_states`` states from consecutive nine-state sets.

    Set ``j`` is seeded with ``(rng_seed, j)`` so growing ``n_states`` keeps the
    earlier states unchanged.
    """
    states = []
    j = 0
    while len(states) < n_states:
        seq = np.random.SeedSequence([int(rng_seed), j])
        states.extend(schedule_states(topology, seq))
        j += 1
    return states[:n_states]


def local_observables(topology, max_weight=2):
    """All weight-1 Paulis and edge-supported weight-2 Paulis, sorted."""
    n = topology.n_qubits
    out = [PauliString.from_sparse(n, {q: c}) for q in range(n) for c in "XYZ"]
    if max_weight >= 2:
        for a, b in topology.edges:
            for ca, cb in product("XYZ", repeat=2):
                out.append(PauliString.from_sparse(n, {a: ca, b: cb}))
    return sorted(out)
