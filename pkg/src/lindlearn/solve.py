"""Least-squares solvers for the Ehrenfest system.

Three methods are offered: plain minimum-norm least squares, least squares
with every per-qubit dissipator block constrained to be positive
semidefinite, and least squares in the T1/T2phi parameterization with
nonnegative rates.  The constrained problems are solved with ADMM: the
x-update is a cached Cholesky solve and the z-update a closed-form
projection (eigenvalue clipping of 3x3 blocks, or clipping at zero).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import (
    BETA_KEYS,
    GENERIC,
    T1T2,
    LindbladModel,
    ParameterVector,
    block_from_params,
    devectorize,
    embed,
    params_from_block,
    to_generic,
    vectorize,
)
from .pauli import StructuralError

log = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
# scaling that makes the Euclidean norm of 9 block parameters equal the Frobenius norm
_SVEC = np.array([1, 1, 1, _SQRT2, _SQRT2, _SQRT2, _SQRT2, _SQRT2, _SQRT2])


class NonConvergence(RuntimeError):
    """Iteration limit reached before the residuals met their tolerances."""


@dataclass(frozen=True)
class SolveOptions:
    method: str = "psd"  # "ls", "psd" or "t1t2"
    eps_abs: float = 1e-9
    eps_rel: float = 1e-9
    max_iter: int = 50_000
    weighting: bool = False
    rho: float | None = None
    polish: bool = True


@dataclass
class SolveResult:
    x: ParameterVector
    objective: float
    violation: float
    iterations: int
    status: str
    method: str
    rank: int | None = None
    info: dict = field(default_factory=dict)

    def model(self, template):
        return devectorize(self.x, template)

    def report(self):
        return {
            "method": self.method,
            "objective": self.objective,
            "violation": self.violation,
            "iterations": self.iterations,
            "status": self.status,
            "rank": self.rank,
            **self.info,
        }


def _matrices(system, weighting):
    if weighting:
        return system.weighted()
    return system.A, system.b


def _objective(A, b, x):
    r = A @ x - b
    return 0.5 * float(r @ r)


def _beta_columns(system):
    """Indices of the dissipator columns grouped per qubit."""
    groups = {}
    for i, c in enumerate(system.columns):
        if c[0] in ("beta", "rate"):
            groups.setdefault(c[1], []).append(i)
    return [groups[q] for q in sorted(groups)]


def block_min_eigenvalues(x, system):
    """Smallest eigenvalue of every generic dissipator block in ``x``."""
    x = np.asarray(getattr(x, "x", x))
    out = []
    for idx in _beta_columns(system):
        out.append(np.linalg.eigvalsh(block_from_params(x[idx]))[0])
    return np.array(out)


def _violation(x, system):
    if system.parameterization == T1T2:
        cols = [i for g in _beta_columns(system) for i in g]
        return float(min(0.0, np.min(x[cols]))) if cols else 0.0
    ev = block_min_eigenvalues(x, system)
    return float(min(0.0, ev.min())) if ev.size else 0.0


def solve_ls(system, options=SolveOptions(method="ls")):
    """Minimum-norm least-squares solution via the SVD; reports the numerical rank."""
    A, b = _matrices(system, options.weighting)
    if A.shape[0] == 0:
        raise StructuralError("equation system is empty")
    x, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    full = A.shape[1]
    status = "converged" if rank == full else "rank_deficient"
    return SolveResult(
        ParameterVector(x, system.columns), _objective(A, b, x), _violation(x, system), 0,
        status, "ls", int(rank), {"condition": float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf},
    )


def project_psd_block(params):
    """Frobenius-nearest PSD block, in the nine-parameter form."""
    w, V = np.linalg.eigh(block_from_params(params))
    return params_from_block((V * np.maximum(w, 0.0)) @ V.conj().T)


def _admm(A, b, groups, scale, project, options, x0):
    """ADMM for ``min 1/2 |Ax - b|^2`` subject to ``project``-feasibility of ``D x[groups]``."""
    n = A.shape[1]
    idx = np.concatenate(groups) if groups else np.zeros(0, dtype=int)
    d = np.concatenate([scale] * len(groups)) if groups else np.zeros(0)
    AtA = A.T @ A
    Atb = A.T @ b
    m = idx.size
    rho = options.rho
    if rho is None:
        diag = np.diag(AtA)[idx] if m else np.diag(AtA)
        rho = float(np.mean(diag)) if diag.size and np.mean(diag) > 0 else 1.0
    x = x0.copy()
    z = project(d * x[idx])
    u = np.zeros(m)

    def factor(rho):
        M = AtA.copy()
        M[idx, idx] += rho * d**2
        ridge = 0.0
        for _ in range(8):
            try:
                return scipy.linalg.cho_factor(M + ridge * np.eye(n), check_finite=False)
            except np.linalg.LinAlgError:
                ridge = max(ridge * 100, 1e-14 * max(1.0, float(np.max(np.diag(M)))))
        raise np.linalg.LinAlgError("x-update matrix is not positive definite")

    cho = factor(rho)
    it = 0
    status = "max_iter"
    eps_abs, eps_rel = options.eps_abs, options.eps_rel
    for it in range(1, options.max_iter + 1):
        rhs = Atb.copy()
        rhs[idx] += rho * d * (z - u)
        x = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
        Dx = d * x[idx]
        z_old = z
        z = project(Dx + u)
        u = u + Dx - z
        r_norm = float(np.linalg.norm(Dx - z))
        s_norm = float(rho * np.linalg.norm(d * (z - z_old)))
        eps_pri = eps_abs * math.sqrt(max(m, 1)) + eps_rel * max(np.linalg.norm(Dx), np.linalg.norm(z))
        eps_dual = eps_abs * math.sqrt(n) + eps_rel * float(np.linalg.norm(rho * d * u))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            status = "converged"
            break
        # residual balancing
        if r_norm > 10 * s_norm:
            rho *= 2.0
            u /= 2.0
            cho = factor(rho)
        elif s_norm > 10 * r_norm:
            rho /= 2.0
            u *= 2.0
            cho = factor(rho)
    x[idx] = z / d
    return x, it, status, {"rho": rho, "primal_residual": r_norm, "dual_residual": s_norm}


def _polish(A, b, x, groups):
    """Re-solve the unconstrained columns with the constrained ones held fixed."""
    fixed = np.concatenate(groups) if groups else np.zeros(0, dtype=int)
    free = np.setdiff1d(np.arange(A.shape[1]), fixed)
    if free.size:
        x = x.copy()
        x[free] = np.linalg.lstsq(A[:, free], b - A[:, fixed] @ x[fixed], rcond=None)[0]
    return x


def _constrained(system, options, project, scale, method, feasible_tol):
    A, b = _matrices(system, options.weighting)
    if A.shape[0] == 0:
        raise StructuralError("equation system is empty")
    groups = _beta_columns(system)
    ls = solve_ls(system, SolveOptions(method="ls", weighting=options.weighting))
    if ls.violation >= -feasible_tol:
        # inactive constraints: the least-squares optimum is already feasible
        return SolveResult(ls.x, ls.objective, ls.violation, 0, "converged", method, ls.rank,
                           {"inactive": True})
    x, it, status, info = _admm(A, b, groups, scale, project, options, ls.x.x)
    if options.polish:
        x = _polish(A, b, x, groups)
    if status != "converged":
        log.warning("%s solve stopped after %d iterations", method, it)
    return SolveResult(ParameterVector(x, system.columns), _objective(A, b, x),
                       _violation(x, system), it, status, method, ls.rank, info)


def solve_psd(system, options=SolveOptions()):
    """Least squares with each 3x3 dissipator block constrained to be PSD."""
    if system.parameterization != GENERIC:
        raise StructuralError("PSD solve needs the generic parameterization")

    def project(v):
        out = np.empty_like(v)
        for s in range(0, v.size, 9):
            out[s:s + 9] = _SVEC * project_psd_block(v[s:s + 9] / _SVEC)
        return out

    return _constrained(system, options, project, _SVEC, "psd", 0.0)


def solve_t1t2(system, options=SolveOptions(method="t1t2")):
    """Least squares over ``(alpha, beta_down, beta_phi)`` with nonnegative rates."""
    if system.parameterization != T1T2:
        raise StructuralError("T1/T2phi solve needs the T1/T2phi parameterization")
    return _constrained(system, options, lambda v: np.maximum(v, 0.0), np.ones(2), "t1t2", 0.0)


def solve(system, options=SolveOptions()):
    if options.method == "ls":
        return solve_ls(system, options)
    if options.method == "psd":
        return solve_psd(system, options)
    if options.method == "t1t2":
        return solve_t1t2(system, options)
    raise ValueError(f"unknown solve method {options.method!r}")


# ---------------------------------------------------------------- model errors


@dataclass(frozen=True)
class ModelError:
    median: float
    H: float
    Hc: float
    D: float
    Dc: float
    abs_errors: np.ndarray = field(repr=False)
    labels: tuple = field(repr=False, default=())

    def as_dict(self):
        return {"median": self.median, "H": self.H, "Hc": self.Hc, "D": self.D, "Dc": self.Dc}


def model_error(learned, truth, zero_tol=0.0):
    """Coefficient errors of ``learned`` against ``truth``.

    Both models are expressed with the union of their Hamiltonian terms and
    generic dissipator blocks.  ``H``/``D`` are one-norms of the errors on
    terms that are nonzero in ``truth``; ``Hc``/``Dc`` on the remaining ones.
    """
    if learned.topology != truth.topology:
        raise StructuralError("models live on different topologies")
    terms = {p: 0.0 for p in truth.paulis}
    terms.update({p: 0.0 for p in learned.paulis})
    template = LindbladModel(truth.topology, tuple(terms.items()), truth.dissipator, GENERIC,
                             truth.unit_time_ns)
    lx = vectorize(embed(to_generic(learned), template)).x
    tx = vectorize(embed(to_generic(truth), template)).x
    err = np.abs(lx - tx)
    n_alpha = len(template.terms)
    ideal = np.abs(tx) > zero_tol
    h, d = slice(0, n_alpha), slice(n_alpha, None)
    labels = tuple(str(p) for p in template.paulis) + tuple(
        f"beta:{q}:{k}" for q in range(truth.n_qubits) for k in BETA_KEYS
    )
    return ModelError(
        float(np.median(err)),
        float(err[h][ideal[h]].sum()),
        float(err[h][~ideal[h]].sum()),
        float(err[d][ideal[d]].sum()),
        float(err[d][~ideal[d]].sum()),
        err,
        labels,
    )


def geometric_mean(values):
    """Geometric mean, the aggregate used across shot settings."""
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        raise ValueError("geometric mean needs positive values")
    return float(np.exp(np.mean(np.log(v))))


def save_solve_report(result, path, **extra):
    with open(path, "w") as fh:
        json.dump({**result.report(), **extra}, fh, indent=1, sort_keys=True)


__all__ = [
    "SolveOptions",
    "SolveResult",
    "ModelError",
    "NonConvergence",
    "solve",
    "solve_ls",
    "solve_psd",
    "solve_t1t2",
    "project_psd_block",
    "block_min_eigenvalues",
    "model_error",
    "geometric_mean",
    "save_solve_report",
]
