"""Sums of exponentially damped sinusoids fitted to integer-depth data.

A fit has the form ``f(t) = sum_j a_j exp(b_j t) cos(w_j t + phi_j)``.
Candidate terms come from the generalized pencil-of-functions (GPOF) method;
a greedy selection then keeps the smallest subset whose squared misfit lies
within ``mu`` times the misfit expected from shot noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

SVD_CUT = 1e-9
PAIR_TOL = 1e-6
MIN_ABS_Z = 0.1
MAX_GROWTH = 0.05
PAIR_GUARD = 2.5
REFIT_FACTOR = 10.0
DEFAULT_MU = 3.0
# per-point rms used as the target when the data carry no shot noise
EXACT_RMS = 1e-13
EXHAUSTIVE_LIMIT = 12


@dataclass(frozen=True)
class DampedSinusoidTerm:
    a: float
    b: float
    omega: float
    phi: float

    @classmethod
    def canonical(cls, a, b, omega, phi):
        """Term with ``0 <= omega <= pi``, ``a >= 0`` and ``phi`` wrapped to ``[-pi, pi]``.

        Integer sampling cannot tell ``omega`` from ``omega + 2 pi k``; the
        principal alias is kept.
        """
        omega = math.remainder(omega, 2 * math.pi)
        if omega < 0:
            omega, phi = -omega, -phi
        if a < 0:
            a, phi = -a, phi + math.pi
        phi = math.remainder(phi, 2 * math.pi)
        return cls(float(a), float(b), float(omega), float(phi))

    @property
    def pole(self):
        return complex(math.exp(self.b) * np.exp(1j * self.omega))

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * np.exp(self.b * t) * np.cos(self.omega * t + self.phi)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        arg = self.omega * t + self.phi
        return self.a * np.exp(self.b * t) * (self.b * np.cos(arg) - self.omega * np.sin(arg))

    def as_dict(self):
        return {"a": self.a, "b": self.b, "omega": self.omega, "phi": self.phi}


@dataclass
class PencilSolution:
    residues: np.ndarray
    poles: np.ndarray
    pairs: list = field(default_factory=list)  # index tuples: (i,) real/unpaired, (i, j) conjugates

    def __len__(self):
        return len(self.poles)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if not len(self.poles):
            return np.zeros_like(t)
        return np.real(np.power.outer(self.poles.astype(complex), t).T @ self.residues)

    def terms(self):
        return pencil_to_terms(self)

    def extend(self, other):
        off = len(self.poles)
        return PencilSolution(
            np.concatenate([self.residues, other.residues]),
            np.concatenate([self.poles, other.poles]),
            list(self.pairs) + [tuple(i + off for i in p) for p in other.pairs],
        )


def _pair_up(z, tol):
    """Group indices of ``z`` into conjugate pairs and singletons."""
    used = set()
    groups = []
    order = np.argsort(-np.abs(z))
    for i in order:
        if i in used:
            continue
        used.add(i)
        scale = tol * (1 + abs(z[i]))
        if abs(z[i].imag) <= scale:
            groups.append((int(i),))
            continue
        best, dist = None, None
        for j in order:
            if j in used:
                continue
            dj = abs(z[i] - np.conj(z[j]))
            if dj <= scale and (dist is None or dj < dist):
                best, dist = j, dj
        if best is None:
            groups.append((int(i),))
        else:
            used.add(best)
            groups.append((int(i), int(best)))
    return groups


def gpof(y, pencil=None, svd_cut=SVD_CUT, pair_tol=PAIR_TOL, rank=None):
    """Generalized pencil-of-functions fit ``y[k] ~ sum_j r_j z_j**k``.

    Singular values below ``svd_cut`` times the largest are truncated; the
    pencil parameter defaults to ``floor(len(y) / 2)``.  ``rank`` caps the
    number of retained singular values (and hence poles).
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    if m < 4:
        raise ValueError("GPOF needs at least four samples")
    L = m // 2 if pencil is None else int(pencil)
    if not 1 <= L <= m - 2:
        raise ValueError(f"pencil parameter {L} out of range for {m} samples")
    empty = PencilSolution(np.zeros(0, complex), np.zeros(0, complex), [])
    if not np.any(y):
        return empty
    Y = np.array([y[i:i + L + 1] for i in range(m - L)])
    _, s, Vh = np.linalg.svd(Y, full_matrices=False)
    keep = min(int(np.sum(s > svd_cut * s[0])), L)
    if rank is not None:
        keep = min(keep, int(rank))
    if keep == 0:
        return empty
    Vk = Vh[:keep]  # keep x (L+1), spans the row space of Y
    A, B = Vk[:, :-1], Vk[:, 1:]
    z = np.linalg.eigvals(B @ np.linalg.pinv(A))
    z = z[np.abs(z) > 1e-300]
    Z = np.power.outer(z, np.arange(m)).T
    r = np.linalg.lstsq(Z, y.astype(complex), rcond=None)[0]
    return PencilSolution(r, z, _pair_up(z, pair_tol))


def pencil_to_terms(sol):
    """Convert residue/pole groups into real damped sinusoid terms."""
    terms = []
    for g in sol.pairs:
        if len(g) == 2:
            i, j = g
            z = 0.5 * (sol.poles[i] + np.conj(sol.poles[j]))
            r = 0.5 * (sol.residues[i] + np.conj(sol.residues[j]))
            a = 2 * abs(r)
        else:
            (i,) = g
            z, r = sol.poles[i], sol.residues[i]
            a = abs(r)
            if abs(z.imag) <= PAIR_TOL * (1 + abs(z)):
                # real pole: value Re(r) z**k, sign of z gives omega in {0, pi}
                zr = z.real
                omega = 0.0 if zr > 0 else math.pi
                terms.append(DampedSinusoidTerm.canonical(r.real, math.log(abs(zr)), omega, 0.0))
                continue
        terms.append(DampedSinusoidTerm.canonical(a, math.log(abs(z)), float(np.angle(z)), float(np.angle(r))))
    return [t for t in terms if t.a > 0]


def dedupe_terms(terms, tol=1e-9):
    """Drop terms whose pole repeats an earlier one within ``tol`` (relative)."""
    out = []
    for t in terms:
        z = t.pole
        if any(abs(z - u.pole) <= tol * (1 + abs(z)) for u in out):
            continue
        out.append(t)
    return out


def eval_terms(terms, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for term in terms:
        out = out + term.value(t)
    return out


def eval_terms_derivative(terms, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for term in terms:
        out = out + term.derivative(t)
    return out


def residual_refit(y, current, pencil=None, svd_cut=SVD_CUT):
    """Run GPOF on ``y - f(k)`` and append the new poles to ``current``."""
    y = np.asarray(y, dtype=float)
    resid = y - current.value(np.arange(y.shape[0]))
    if not np.any(np.abs(resid) > 1e-12 * max(1.0, np.max(np.abs(y)))):
        return current
    return current.extend(gpof(resid, pencil, svd_cut))


def filter_terms(pool, min_abs_z=MIN_ABS_Z, max_arg_z=None, max_growth=MAX_GROWTH):
    """Drop terms that decay too fast, grow, or (optionally) oscillate too fast."""
    if isinstance(pool, PencilSolution):
        keep = []
        for g in pool.pairs:
            z = pool.poles[g[0]]
            if abs(z) < min_abs_z or math.log(abs(z)) > max_growth:
                continue
            if max_arg_z is not None and abs(np.angle(z)) > max_arg_z:
                continue
            keep.append(g)
        idx = sorted(i for g in keep for i in g)
        remap = {old: new for new, old in enumerate(idx)}
        return PencilSolution(
            pool.residues[idx], pool.poles[idx], [tuple(remap[i] for i in g) for g in keep]
        )
    out = []
    for t in pool:
        if math.exp(t.b) < min_abs_z or t.b > max_growth:
            continue
        if max_arg_z is not None and t.omega > max_arg_z:
            continue
        out.append(t)
    return out


@dataclass(frozen=True)
class MisfitStats:
    mean: float
    variance: float
    abs_mean: float
    abs_variance: float


def expected_misfit(variances):
    """Expected squared and absolute deviation of data from the true curve."""
    v = np.asarray(getattr(variances, "variances", variances), dtype=float)
    sigma = np.sqrt(v)
    return MisfitStats(
        float(v.sum()),
        float(2 * (v**2).sum()),
        float(sigma.sum() * math.sqrt(2 / math.pi)),
        float(v.sum() * (1 - 2 / math.pi)),
    )


# ---------------------------------------------------------------- local refinement


def _pack(terms):
    return np.array([[t.a, t.b, t.omega, t.phi] for t in terms], dtype=float).ravel()


def _unpack(theta):
    return [DampedSinusoidTerm.canonical(*row) for row in theta.reshape(-1, 4)]


def _model_and_jac(theta, k):
    P = theta.reshape(-1, 4)
    a, b, w, phi = P[:, 0:1], P[:, 1:2], P[:, 2:3], P[:, 3:4]
    e = np.exp(b * k)
    arg = w * k + phi
    c, s = np.cos(arg), np.sin(arg)
    f = (a * e * c).sum(axis=0)
    J = np.empty((k.shape[0], P.size))
    J[:, 0::4] = (e * c).T
    J[:, 1::4] = (k * a * e * c).T
    J[:, 2::4] = (-k * a * e * s).T
    J[:, 3::4] = (-a * e * s).T
    return f, J


def refine_terms(y, terms, max_iter=200, max_growth=MAX_GROWTH, min_decay=math.log(1e-3)):
    """Damped Gauss-Newton (Levenberg-Marquardt) on all term parameters.

    Steps that increase the misfit, or push a damping rate outside
    ``[min_decay, max_growth]``, are rejected.  Returns ``(terms, misfit)``.
    """
    y = np.asarray(y, dtype=float)
    k = np.arange(y.shape[0], dtype=float)
    theta = _pack(terms)
    f, J = _model_and_jac(theta, k)
    r = y - f
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        g = J.T @ r
        H = J.T @ J
        d = np.diag(H).copy()
        d[d <= 0] = 1e-12
        improved = False
        for _ in range(30):
            try:
                step = np.linalg.solve(H + lam * np.diag(d), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            bs = trial[1::4]
            if np.any(bs > max_growth) or np.any(bs < min_decay):
                lam *= 4
                continue
            f_t, J_t = _model_and_jac(trial, k)
            r_t = y - f_t
            c_t = float(r_t @ r_t)
            if c_t < cost:
                rel = (cost - c_t) / max(cost, 1e-300)
                theta, J, r, cost = trial, J_t, r_t, c_t
                lam = max(lam / 3, 1e-15)
                improved = True
                break
            lam *= 4
        if not improved or rel < 1e-12 or cost == 0.0:
            break
    return _unpack(theta), cost


# ---------------------------------------------------------------- selection


@dataclass
class FitReport:
    terms: list
    misfit: float
    target: float
    mu: float
    status: str = "converged"
    flags: dict = field(default_factory=dict)

    def value(self, t):
        return eval_terms(self.terms, t)

    def derivative(self, t):
        return eval_terms_derivative(self.terms, t)

    def as_dict(self):
        return {
            "terms": [t.as_dict() for t in self.terms],
            "misfit": self.misfit,
            "target": self.target,
            "mu": self.mu,
            "status": self.status,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d):
        terms = [DampedSinusoidTerm(t["a"], t["b"], t["omega"], t["phi"]) for t in d["terms"]]
        return cls(terms, d["misfit"], d["target"], d["mu"], d.get("status", "converged"),
                   d.get("flags", {}))


def eval_fit(fit, t):
    return fit.value(t)


def eval_fit_derivative(fit, t):
    return fit.derivative(t)


def _misfit(y, terms, k):
    r = y - eval_terms(terms, k)
    return float(r @ r)


def select_parsimonious(y, variances, pool, mu=DEFAULT_MU, local_opt=True,
                        target=None, exact_rms=EXACT_RMS, pair_guard=PAIR_GUARD,
                        exhaustive_limit=EXHAUSTIVE_LIMIT):
    """Greedy selection of the fewest pool terms that fit within the target misfit.

    Each round adds the best single term, or the best pair when its misfit
    reduction exceeds ``pair_guard`` times that of the best single.  After an
    addition the selected terms are refined; refined coefficients are kept only
    when they reach the target, otherwise the originals are restored.
    """
    y = np.asarray(y, dtype=float)
    k = np.arange(y.shape[0], dtype=float)
    if target is None:
        target = max(mu * float(np.sum(variances)), y.shape[0] * exact_rms**2)
    values = [t.value(k) for t in pool]
    remaining = list(range(len(pool)))
    selected = []
    resid = y.copy()
    current = float(resid @ resid)
    flags = {"local_opt_improved": False, "pairs_added": 0, "exhaustive_fallback": False}
    best = ([], current)
    if current <= target:
        return FitReport([], current, target, mu, "converged", flags)
    while remaining:
        singles = [(float(np.sum((resid - values[i]) ** 2)), (i,)) for i in remaining]
        m1, pick = min(singles)
        red1 = current - m1
        if len(remaining) >= 2:
            pairs = [
                (float(np.sum((resid - values[i] - values[j]) ** 2)), (i, j))
                for i, j in combinations(remaining, 2)
            ]
            m2, pick2 = min(pairs)
            red2 = current - m2
            if red2 > 0 and red2 > pair_guard * max(red1, 0.0):
                if local_opt:
                    # a refined single term may already do what the pair does
                    trial = [pool[i] for i in selected] + [pool[pick[0]]]
                    opt_terms, opt_cost = refine_terms(y, trial)
                    if opt_cost <= target:
                        flags["local_opt_improved"] = True
                        return FitReport(opt_terms, opt_cost, target, mu, "converged", flags)
                pick, m1 = pick2, m2
                flags["pairs_added"] += 1
        for i in pick:
            remaining.remove(i)
            selected.append(i)
            resid = resid - values[i]
        current = m1
        terms = [pool[i] for i in selected]
        if current < best[1]:
            best = (terms, current)
        if current <= target:
            return FitReport(terms, current, target, mu, "converged", flags)
        if local_opt:
            opt_terms, opt_cost = refine_terms(y, terms)
            if opt_cost < best[1]:
                best = (opt_terms, opt_cost)
                flags["local_opt_improved"] = True
            if opt_cost <= target:
                return FitReport(opt_terms, opt_cost, target, mu, "converged", flags)
    if len(pool) <= exhaustive_limit:
        found = _exhaustive(y, pool, target, k)
        if found is not None:
            flags["exhaustive_fallback"] = True
            return FitReport(found[0], found[1], target, mu, "converged", flags)
    return FitReport(best[0], best[1], target, mu, "exhausted", flags)


def _exhaustive(y, pool, target, k):
    """Smallest subset of ``pool`` meeting ``target`` (lowest misfit among ties)."""
    values = [t.value(k) for t in pool]
    for size in range(1, len(pool) + 1):
        hits = []
        for idx in combinations(range(len(pool)), size):
            r = y - sum(values[i] for i in idx)
            m = float(r @ r)
            if m <= target:
                hits.append((m, idx))
        if hits:
            m, idx = min(hits)
            return [pool[i] for i in idx], m
    return None


@dataclass(frozen=True)
class FitOptions:
    mu: float = DEFAULT_MU
    local_opt: bool = True
    svd_cut: float = SVD_CUT
    min_abs_z: float = MIN_ABS_Z
    max_arg_z: float | None = None
    pencil: int | None = None
    residual_refit: bool = True
    exact_rms: float = EXACT_RMS
    rank_sweep: int = 8


def fit_series(y, variances, options=FitOptions()):
    """Full fitting procedure for one time series; returns a ``FitReport``."""
    y = np.asarray(y, dtype=float)
    variances = np.asarray(variances, dtype=float)
    target = max(options.mu * float(variances.sum()), y.shape[0] * options.exact_rms**2)
    sol = gpof(y, options.pencil, options.svd_cut)
    refit = False
    if options.residual_refit and len(sol):
        r = y - sol.value(np.arange(y.shape[0]))
        if float(r @ r) > REFIT_FACTOR * target:
            sol = residual_refit(y, sol, options.pencil, options.svd_cut)
            refit = True
    n_before = len(sol.pairs)
    kept = filter_terms(sol, options.min_abs_z, options.max_arg_z)
    pool = dedupe_terms(pencil_to_terms(kept))
    report = select_parsimonious(y, variances, pool, options.mu, options.local_opt, target=target)
    swept = False
    if report.status != "converged" and options.rank_sweep:
        # noise-dominated data: low-rank pencils often recover poles the full one misses
        extra = []
        for r in range(1, options.rank_sweep + 1):
            low = gpof(y, options.pencil, options.svd_cut, rank=r)
            extra += pencil_to_terms(filter_terms(low, options.min_abs_z, options.max_arg_z))
        retry = select_parsimonious(y, variances, dedupe_terms(extra + pool), options.mu, options.local_opt,
                                    target=target)
        if retry.status == "converged" or retry.misfit < report.misfit:
            report, swept = retry, True
    report.flags["residual_refit"] = refit
    report.flags["rank_sweep"] = swept
    report.flags["filtered"] = n_before - len(kept.pairs)
    report.flags["pool_size"] = len(pool)
    return report


def fit_all(series, options=FitOptions(), jobs=1):
    """Fit every series; returns ``{series.key: FitReport}``."""
    def one(s):
        return s.key, fit_series(s.values, s.variances, options)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            return dict(ex.map(one, series))
    return dict(map(one, series))


def save_fits(fits, path):
    doc = {f"{si}|{obs}": rep.as_dict() for (si, obs), rep in fits.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_fits(path):
    with open(path) as fh:
        doc = json.load(fh)
    out = {}
    for key, d in doc.items():
        si, obs = key.split("|")
        out[int(si), obs] = FitReport.from_dict(d)
    return out


# ---------------------------------------------------------------- Nyquist diagnostics


@dataclass
class NyquistReport:
    max_frequency: float | None = None
    near_limit: bool = False
    aliased: bool = False
    fitted_near_nyquist: list = field(default_factory=list)
    wrong_frequencies: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def bohr_frequencies(model, dense_limit=10):
    """Angular frequencies per unit time present in the model's coherent dynamics.

    Differences of Hamiltonian eigenvalues for small models; for larger ones a
    single upper bound ``2 * sum |alpha|`` is returned.
    """
    if model.n_qubits > dense_limit:
        return np.array([2 * float(np.sum(np.abs(model.alpha)))])
    e = np.linalg.eigvalsh(model.hamiltonian_matrix())
    diffs = np.abs(np.subtract.outer(e, e)).ravel()
    diffs = np.unique(np.round(diffs, 12))
    return diffs[diffs > 1e-12]


def alias(omega):
    """Frequency observed at integer sampling, folded into ``[0, pi]``."""
    w = math.remainder(float(omega), 2 * math.pi)
    return abs(w)


def nyquist_check(fit=None, model=None, margin=0.05, warn_fraction=0.85, tol=1e-3):
    """Flag frequencies at or beyond the integer-sampling Nyquist limit ``pi``.

    Fitted terms within ``margin`` (relative) of ``pi`` are reported.  With a
    model, its largest Bohr frequency sets ``near_limit`` (at least
    ``warn_fraction * pi``) and ``aliased`` (at least ``pi``); fitted
    frequencies that only match folded images of model frequencies are
    listed as wrong.
    """
    rep = NyquistReport()
    terms = [] if fit is None else getattr(fit, "terms", fit)
    for t in terms:
        if t.omega >= (1 - margin) * math.pi:
            rep.fitted_near_nyquist.append(t.omega)
    if rep.fitted_near_nyquist:
        rep.warnings.append("fitted frequency close to the Nyquist limit")
    if model is not None:
        freqs = bohr_frequencies(model)
        rep.max_frequency = float(freqs.max()) if freqs.size else 0.0
        rep.aliased = rep.max_frequency >= math.pi
        rep.near_limit = rep.max_frequency >= warn_fraction * math.pi
        if rep.aliased:
            rep.warnings.append(
                f"model frequency {rep.max_frequency:.4g} exceeds pi; integer sampling aliases it"
            )
        elif rep.near_limit:
            rep.warnings.append(f"model frequency {rep.max_frequency:.4g} is close to pi")
        for t in terms:
            if t.omega < tol:
                continue
            true_hit = np.any(np.abs(freqs - t.omega) < tol)
            alias_hit = any(abs(alias(f) - t.omega) < tol for f in freqs if f >= math.pi)
            if alias_hit and not true_hit:
                rep.wrong_frequencies.append(t.omega)
        if rep.wrong_frequencies:
            rep.warnings.append("fitted frequencies are aliases of model frequencies")
    return rep


def fractional_cx_x_nyquist(alpha, beta):
    """Highest frequency (cycles per unit time) of the fractional CX + X example and its check.

    Returns ``(max_cycles, aliased)`` where aliasing occurs once
    ``alpha + beta`` exceeds 1.
    """
    return (alpha + beta) / 2.0, (alpha + beta) > 1.0


__all__ = [
    "DampedSinusoidTerm",
    "PencilSolution",
    "FitReport",
    "FitOptions",
    "MisfitStats",
    "NyquistReport",
    "gpof",
    "pencil_to_terms",
    "residual_refit",
    "filter_terms",
    "expected_misfit",
    "select_parsimonious",
    "refine_terms",
    "fit_series",
    "fit_all",
    "eval_fit",
    "eval_fit_derivative",
    "nyquist_check",
    "bohr_frequencies",
]
