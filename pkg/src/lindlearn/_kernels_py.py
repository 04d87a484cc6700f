"""Pure-numpy implementations of the numerical kernels.

Every function here has a twin of the same name and signature in the
compiled ``_ckernels`` module.  Pauli strings enter the kernels as a pair of
bit masks (``xmask``, ``zmask``) over ``n`` qubits, with qubit 0 stored in the
most significant bit so that basis index ordering matches ``np.kron``.

A Pauli string acts on computational basis states as a monomial matrix::

    P |b> = phase[b] |perm[b]>,   perm[b] = b ^ xmask

Density matrices are dense ``(d, d)`` complex arrays and superoperators act on
column-stacked vectorizations ``vec(rho)[c * d + r] = rho[r, c]``.
"""

import numpy as np

_IPOW = np.array([1.0, 1.0j, -1.0, -1.0j], dtype=np.complex128)


def _popcount(arr):
    arr = arr.astype(np.int64, copy=True)
    count = np.zeros_like(arr)
    while np.any(arr):
        count += arr & 1
        arr >>= 1
    return count


def pauli_monomial(xmask, zmask, n):
    """Return ``(perm, phase)`` describing the Pauli string as a monomial matrix."""
    d = 1 << n
    b = np.arange(d, dtype=np.int64)
    n_y = bin(xmask & zmask).count("1")
    sign = 1 - 2 * (_popcount(b & zmask) & 1)
    phase = _IPOW[n_y % 4] * sign
    return b ^ xmask, phase.astype(np.complex128)


def add_monomial_superop(L, coeff, perm_a, ph_a, perm_b, ph_b):
    """Accumulate ``coeff * (rho -> A rho B)`` into the superoperator ``L`` in place.

    ``A`` and ``B`` are monomial matrices with ``A[perm_a[x], x] = ph_a[x]``.
    """
    d = perm_a.shape[0]
    r = np.arange(d)
    rows = perm_a[None, :] + d * r[:, None]
    cols = r[None, :] + d * perm_b[:, None]
    vals = coeff * ph_a[None, :] * ph_b[:, None]
    L[rows.ravel(), cols.ravel()] += vals.ravel()


def pauli_rotate(rho, perm, ph, c, s):
    """Return ``U rho U^dagger`` for ``U = c I - i s P``."""
    p_rho = np.empty_like(rho)
    p_rho[perm, :] = ph[:, None] * rho
    rho_p = rho[:, perm] * ph[None, :]
    p_rho_p = np.empty_like(rho)
    p_rho_p[perm, :] = ph[:, None] * rho_p
    return c * c * rho + s * s * p_rho_p + 1j * c * s * (rho_p - p_rho)


def apply_1q_superop(rho, S, q, n):
    """Apply a 4x4 single-qubit superoperator ``S`` to qubit ``q`` of ``rho``."""
    lo = 1 << (n - 1 - q)
    hi = 1 << q
    t = rho.reshape(hi, 2, lo, hi, 2, lo)
    # column-stacked: vec index = c * 2 + r
    S4 = S.reshape(2, 2, 2, 2)  # [c', r', c, r]
    out = np.einsum("ABcr,irjkcl->iBjkAl", S4, t, optimize=True)
    return np.ascontiguousarray(out).reshape(rho.shape)


def pauli_expectation(rho, perm, ph):
    """Return ``Tr(P rho)`` as a complex number."""
    d = perm.shape[0]
    return complex(np.sum(ph * rho[np.arange(d), perm]))


def z_expectations(probs, masks):
    """Return ``sum_x probs[x] * (-1)^popcount(x & mask)`` for each mask."""
    probs = np.asarray(probs, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.int64)
    x = np.arange(probs.shape[0], dtype=np.int64)
    signs = 1 - 2 * (_popcount(x[None, :] & masks[:, None]) & 1)
    return signs @ probs
